"""Command line front end: ``run``, ``monitor`` and ``check``.

Exit status: 0 when the run (or monitored trace) satisfies the formula with
positive robustness, 1 when it completes but the robustness is not positive,
2 on any fault or error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .dynamics import min_gram_eigenvalue
from .errors import ParseError, RunAborted, StlFunnelError, ValidationError
from .funnel import select_funnel_parameters
from .hybrid import run, task_optima
from .robustness import CompiledBody, exact_robustness
from .scenario import load_scenario, scenario_from_dict, tomllib, with_seed

EXIT_OK, EXIT_NONPOSITIVE, EXIT_ERROR = 0, 1, 2


def _fmt(v):
    return format(float(v), ".17g")


def trajectory_header(n, m):
    return (["time", "mode"] + [f"x_{i}" for i in range(1, n + 1)]
            + ["rho_active", "funnel_lo", "funnel_hi"]
            + [f"u_{i}" for i in range(1, m + 1)] + [f"w_{i}" for i in range(1, n + 1)])


def write_trajectory_csv(traj, path, n, m):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(n, m))
        for t, q, x, rho, lo, hi, u, dist in traj.rows():
            w.writerow([_fmt(t), str(q)] + [_fmt(v) for v in x] + [_fmt(rho), _fmt(lo), _fmt(hi)]
                       + [_fmt(v) for v in u] + [_fmt(v) for v in dist])


def read_trajectory_csv(path):
    """Return ``(times, states)`` from a trajectory CSV written by ``run``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError("trace", "empty file")
    header = rows[0]
    if not header or header[0] != "time":
        raise ValidationError("trace", "first column must be 'time'")
    xcols = [i for i, name in enumerate(header) if name.startswith("x_")]
    if not xcols:
        raise ValidationError("trace", "no state columns x_1..x_n")
    try:
        data = np.array([[float(r[0])] + [float(r[i]) for i in xcols] for r in rows[1:]], dtype=float)
    except (ValueError, IndexError) as exc:
        raise ValidationError("trace", f"malformed row: {exc}") from exc
    if data.size == 0:
        raise ValidationError("trace", "no samples")
    return data[:, 0], data[:, 1:]


def write_funnel_csv(traj, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "mode", "rho_active", "funnel_lo", "funnel_hi", "margin_lo", "margin_hi"])
        for t, q, _, rho, lo, hi, _, _ in traj.rows():
            w.writerow([_fmt(t), str(q), _fmt(rho), _fmt(lo), _fmt(hi), _fmt(rho - lo), _fmt(hi - rho)])


def write_plot_data(traj, outdir, dims_per_agent):
    """Per-figure CSVs: agent paths, funnel traces, control inputs."""
    outdir.mkdir(parents=True, exist_ok=True)
    states = traj.states
    times = traj.times
    n = states.shape[1] if states.size else 0
    d = dims_per_agent if dims_per_agent and n % dims_per_agent == 0 else 1
    with open(outdir / "paths.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "agent"] + [f"p_{j}" for j in range(1, d + 1)])
        for a in range(n // d if d else 0):
            for t, x in zip(times, states):
                w.writerow([_fmt(t), str(a + 1)] + [_fmt(v) for v in x[a * d:(a + 1) * d]])
    write_funnel_csv(traj, outdir / "funnels.csv")
    inputs = traj.inputs
    with open(outdir / "inputs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        m = inputs.shape[1] if inputs.size else 0
        w.writerow(["time"] + [f"u_{i}" for i in range(1, m + 1)] + ["u_inf"])
        for t, u in zip(times, inputs):
            w.writerow([_fmt(t)] + [_fmt(v) for v in u] + [_fmt(np.max(np.abs(u)) if u.size else 0.0)])


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _clean(o):
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.generic):
        o = o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return o


def write_report(report, scenario, path):
    body = report.as_dict()
    body["formula"] = scenario.formula_text.strip()
    body["tasks"] = [
        {"index": t.index, "kind": t.kind, "window": list(t.window),
         "global_window": list(t.cumulative_window if scenario.kind.p == 0 else t.window)}
        for t in scenario.tasks
    ]
    Path(path).write_text(json.dumps(_clean(body), indent=2, default=_json_default) + "\n", encoding="utf-8")


def cmd_run(args, out=sys.stdout, err=sys.stderr):
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = with_seed(sc, args.seed)
    outdir = Path(args.out if args.out is not None else sc.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    try:
        traj, report = run(sc)
    except RunAborted as exc:
        traj, report = exc.trajectory, exc.report
        print(f"error: {describe_error(exc.cause)}", file=err)
        status = EXIT_ERROR
    write_trajectory_csv(traj, outdir / "trajectory.csv", sc.system.n, sc.system.m)
    write_funnel_csv(traj, outdir / "funnel.csv")
    write_plot_data(traj, outdir / "plots", sc.system.dims_per_agent)
    write_report(report, sc, outdir / "report.json")
    for j in report.jumps:
        print(f"jump {j.from_q}->{j.to_q} at t={j.global_time:.4f} rho={j.rho_at_jump:.6g} "
              f"window_ok={j.window_ok}", file=out)
    if status == EXIT_OK:
        if report.monitor_rho is None:
            print(f"error: {report.error}", file=err)
            return EXIT_ERROR
        print(f"rho_theta = {report.monitor_rho!r}", file=out)
        status = EXIT_OK if report.monitor_rho > 0 else EXIT_NONPOSITIVE
    print(f"wrote {outdir}", file=out)
    return status


def load_formula_file(path, n):
    """A TOML file with ``formula`` and ``[atoms.*]``; the state size comes from the trace."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(getattr(exc, "lineno", 0), None, str(exc)) from exc
    doc = dict(doc)
    doc.setdefault("system", {"kind": "single_integrator", "n": n})
    doc["x0"] = [0.0] * n if "x0" not in doc else doc["x0"]
    doc.pop("tasks", None)
    doc.pop("box", None)
    doc.pop("step", None)
    return scenario_from_dict(doc).formula


def cmd_monitor(args, out=sys.stdout, err=sys.stderr):
    times, states = read_trajectory_csv(args.trace)
    formula = load_formula_file(args.formula, states.shape[1])
    rho = exact_robustness(formula, (times, states), 0.0)
    print(repr(rho), file=out)
    return EXIT_OK if rho > 0 else EXIT_NONPOSITIVE


def cmd_check(args, out=sys.stdout, err=sys.stderr):
    sc = load_scenario(args.scenario)
    print(f"scenario {sc.name}: {sc.kind.N} task(s), p={sc.kind.p}, state dimension {sc.system.n}", file=out)
    bound = sc.box_bound if sc.box_bound is not None else max(1.0, 2 * float(np.max(np.abs(sc.x0))))
    lam = min_gram_eigenvalue(sc.system, bound, seed=sc.seed)
    print(f"assumption 1: min eig(g g^T) over sampled box = {lam:.6g}", file=out)
    if not lam > 0:
        print("error: input matrix is not full row rank on the box", file=err)
        return EXIT_ERROR
    optima = task_optima(sc.tasks, sc.x0, sc.cfg)
    for t, opt in zip(sc.tasks, optima):
        print(f"task {t.index}: {t.kind} window {t.window} rho_opt = {opt:.6g}", file=out)
    first = sc.tasks[0]
    s = sc.task_settings[0]
    params = select_funnel_parameters(first, sc.x0, s.r, s.rho_max, 0.0, sc.kind.p, sc.cfg, sc.policy,
                                      rho_opt=optima[0], t_star=s.t_star,
                                      compiled=CompiledBody(first.body, sc.system.n, sc.cfg))
    print(f"task 1 feasible: {params.as_dict()}", file=out)
    return EXIT_OK


def describe_error(exc):
    """One-line diagnostic that names the error class, e.g. ``InfeasibleTask: [funnel] task 1: ...``."""
    return f"{type(exc).__name__}: {exc}"


def build_parser():
    ap = argparse.ArgumentParser(prog="stlfunnel", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="simulate a scenario and write trajectory, funnel and report files")
    p.add_argument("scenario", help="scenario file or name of a shipped scenario")
    p.add_argument("--seed", type=int, default=None, help="override the disturbance seed")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("monitor", help="exact robustness of a trajectory CSV")
    p.add_argument("trace")
    p.add_argument("--formula", required=True, help="TOML file with 'formula' and [atoms]")
    p.set_defaults(func=cmd_monitor)
    p = sub.add_parser("check", help="static validation of a scenario")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_check)
    return ap


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out=out, err=err)
    except StlFunnelError as exc:
        print(f"error: {describe_error(exc)}", file=err)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
