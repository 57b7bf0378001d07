"""How far the three-agent mission gets as the integration step shrinks.

For each step the scenario is re-validated (the step must divide every
window endpoint) and run once; the table lists the number of completed
tasks, where a fault happened, and the monitored robustness.

    python scripts/step_size_sweep.py [--steps 0.01 0.005 0.0025]
"""

import argparse
import copy

from stlfunnel.errors import RunAborted
from stlfunnel.hybrid import run
from stlfunnel.scenario import resolve_scenario_path, scenario_from_dict, tomllib


def sweep(steps, scenario="paper_sec6"):
    base = tomllib.loads(resolve_scenario_path(scenario).read_text(encoding="utf-8"))
    rows = []
    for h in steps:
        doc = copy.deepcopy(base)
        doc["step"] = h
        try:
            traj, report = run(scenario_from_dict(doc))
            rows.append((h, len(report.jumps), "-", report.monitor_rho, report.wall_time_s))
        except RunAborted as exc:
            rows.append((h, len(exc.report.jumps), f"{type(exc.cause).__name__} at t={exc.trajectory.times[-1]:.2f}",
                         None, exc.report.wall_time_s))
    return rows


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=float, nargs="+", default=[0.01, 0.005, 0.0025])
    args = ap.parse_args()
    print(f"{'step':>8}  {'tasks done':>10}  {'monitor rho':>12}  {'wall s':>7}  fault")
    for h, done, fault, rho, wall in sweep(args.steps):
        rho_txt = "-" if rho is None else f"{rho:.4f}"
        print(f"{h:>8g}  {done:>10d}  {rho_txt:>12}  {wall:>7.1f}  {fault}")
