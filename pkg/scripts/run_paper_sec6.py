"""Run the three-agent mission at the shipped step and at the finer step.

Writes the usual run outputs under out/<scenario>/ and prints one summary
line per scenario.

    python scripts/run_paper_sec6.py [--seed N]
"""

import argparse

from stlfunnel.cli import main


def summarise(name, seed):
    argv = ["run", name, "--out", f"out/{name}"]
    if seed is not None:
        argv += ["--seed", str(seed)]
    code = main(argv)
    print(f"{name}: exit status {code}\n")
    return code


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    for name in ("paper_sec6", "paper_sec6_fine"):
        summarise(name, args.seed)
