"""Hybrid switching between atomic tasks: flow under the active funnel law, jump on completion.

The automaton state is ``z = (q, x, t, Delta, params)``: active task ``q``
(``N + 1`` once every task is done), plant state, episode-local time, global
time of the last jump and the funnel parameters of the active task.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .controller import control_input
from .dynamics import GENERATOR_NAME, DisturbanceSource, Trajectory, integrate_step
from .errors import HybridFault, InfeasibleTask, RunAborted, StlFunnelError
from .funnel import TIME_TOL, SelectionPolicy, select_funnel_parameters
from .robustness import CompiledBody, SmoothConfig, ball_center_start, estimate_optimum, exact_robustness
from .stl_ast import ALWAYS

STAY, JUMP, FAULT = "stay", "jump", "fault"


@dataclass(frozen=True)
class TaskSettings:
    """Per-task design choices: margin r, optional rho_max and t_star."""

    r: float = 0.0
    rho_max: Optional[float] = None
    t_star: Optional[float] = None


@dataclass(frozen=True)
class HybridState:
    q: int
    x: np.ndarray
    t: float
    Delta: float
    params: object


@dataclass(frozen=True)
class JumpRecord:
    from_q: int
    to_q: int
    global_time: float
    local_time: float
    x_at_jump: np.ndarray
    rho_at_jump: float
    window_ok: bool = True

    def as_dict(self):
        return {
            "from_q": self.from_q, "to_q": self.to_q,
            "global_time": self.global_time, "local_time": self.local_time,
            "x_at_jump": [float(v) for v in self.x_at_jump],
            "rho_at_jump": self.rho_at_jump, "window_ok": self.window_ok,
        }


def _settings(settings, q):
    if not settings:
        return TaskSettings()
    return settings[q - 1]


def task_optima(tasks, x0, cfg):
    """Smooth optimum of every task body (raises InfeasibleTask on a nonpositive one)."""
    out = []
    for task in tasks:
        extra = []
        if task.source_body is not None:
            start = ball_center_start(task.source_body, x0)
            if start is not None:
                extra.append(start)
        est = estimate_optimum(task.body, x0, cfg, extra_starts=extra, require_positive=False)
        if not est.rho_opt > 0:
            raise InfeasibleTask(
                f"smooth robustness optimum {est.rho_opt:.6g} is not positive (k={cfg.k})", task.index)
        out.append(est.rho_opt)
    return out


def _select(task, x, delta, kind, cfg, policy, settings, rho_opts, compiled=None):
    s = _settings(settings, task.index)
    return select_funnel_parameters(
        task, x, s.r, s.rho_max, delta, kind.p, cfg, policy,
        rho_opt=None if rho_opts is None else rho_opts[task.index - 1],
        t_star=s.t_star, compiled=compiled)


def initialize(tasks, kind, x0, cfg=SmoothConfig(), policy=SelectionPolicy(), settings=None,
               rho_opts=None):
    """z0 = (1, x0, 0, 0, params of task 1)."""
    if not tasks:
        raise ValueError("no tasks to execute")
    x0 = np.asarray(x0, dtype=float)
    params = _select(tasks[0], x0, 0.0, kind, cfg, policy, settings, rho_opts)
    return HybridState(1, x0, 0.0, 0.0, params)


def _deadline_hi(task):
    return task.window[1]


def jump_condition(z, tasks, kind, cfg=SmoothConfig(), rho=None):
    """Decide stay / jump / fault for the active task at state z."""
    N = len(tasks)
    if z.q > N:
        return STAY
    task = tasks[z.q - 1]
    shift = kind.p * z.Delta
    if rho is None:
        rho = CompiledBody(task.body, z.x.shape[0], cfg).value(z.x)
    inside = z.params.r < rho < z.params.rho_max
    if task.kind == ALWAYS:
        deadline = _deadline_hi(task) - shift
        if z.t < deadline - TIME_TOL:
            return STAY
        if z.t <= deadline + TIME_TOL:
            return JUMP if inside else FAULT
        return FAULT
    lo = task.window[0] - shift
    hi = z.params.t_star - shift
    if lo - TIME_TOL <= z.t <= hi + TIME_TOL and inside:
        return JUMP
    if z.t > hi + TIME_TOL:
        return FAULT
    return STAY


def _window_ok(task, kind, z):
    g = z.Delta + z.t
    if kind.p == 1:
        lo, hi = task.window
        if task.kind == ALWAYS:
            return abs(g - hi) <= TIME_TOL * max(1.0, hi) * 10
        return lo - TIME_TOL <= g <= hi + TIME_TOL
    lo, hi = task.window
    if task.kind == ALWAYS:
        return abs(z.t - hi) <= TIME_TOL * max(1.0, hi) * 10
    return lo - TIME_TOL <= z.t <= hi + TIME_TOL


def jump(z, tasks, kind, cfg=SmoothConfig(), policy=SelectionPolicy(), settings=None,
         rho_opts=None, rho=None, compiled=None):
    """Apply the jump map: advance q, accumulate Delta, reset t, re-select parameters."""
    N = len(tasks)
    task = tasks[z.q - 1]
    if rho is None:
        rho = CompiledBody(task.body, z.x.shape[0], cfg).value(z.x)
    record = JumpRecord(z.q, z.q + 1, z.Delta + z.t, z.t, z.x.copy(), float(rho),
                        _window_ok(task, kind, z))
    delta = z.Delta + z.t
    q_next = z.q + 1
    if q_next > N:
        return HybridState(N + 1, z.x, 0.0, delta, z.params), record
    params = _select(tasks[q_next - 1], z.x, delta, kind, cfg, policy, settings, rho_opts, compiled)
    return HybridState(q_next, z.x, 0.0, delta, params), record


def global_window(task, kind):
    return task.window if kind.p == 1 else task.cumulative_window


@dataclass
class RunReport:
    scenario: str = ""
    completed: bool = False
    N: int = 0
    p: int = 1
    step: float = 0.01
    seed: int = 0
    generator: str = GENERATOR_NAME
    integrator: str = "rk4-fixed-step, zero-order hold on u and w"
    smoothing_k: float = 1.0
    disturbance: dict = field(default_factory=dict)
    jumps: list = field(default_factory=list)
    episodes: list = field(default_factory=list)
    min_lower_margin: float = math.inf
    min_upper_margin: float = math.inf
    max_u_inf: float = 0.0
    saturation_bound: Optional[float] = None
    saturation_exceedances: int = 0
    monitor_rho: Optional[float] = None
    r_min: Optional[float] = None
    rho_max_min: Optional[float] = None
    claim_lower_holds: Optional[bool] = None
    claim_upper_holds: Optional[bool] = None
    error: Optional[str] = None
    wall_time_s: float = 0.0

    def as_dict(self):
        d = dict(self.__dict__)
        d["jumps"] = [j.as_dict() for j in self.jumps]
        for key in ("min_lower_margin", "min_upper_margin"):
            if math.isinf(d[key]):
                d[key] = None
        return d


def _episode(q, params):
    return {"q": q, **{k: (float(v) if isinstance(v, (float, np.floating)) else v)
                       for k, v in params.as_dict().items()}}


class _Executor:
    def __init__(self, scenario):
        self.sc = scenario
        self.tasks = scenario.tasks
        self.kind = scenario.kind
        self.cfg = scenario.cfg
        self.policy = scenario.policy
        self.settings = scenario.task_settings
        self.sys = scenario.system
        self.h = scenario.step
        self.compiled = [CompiledBody(t.body, self.sys.n, self.cfg) for t in self.tasks]

    def horizon(self):
        if self.sc.duration is not None:
            return self.sc.duration
        if self.kind.p == 1:
            return max(t.window[1] for t in self.tasks)
        return self.tasks[-1].cumulative_window[1]

    def run(self):
        sc, h = self.sc, self.h
        N = len(self.tasks)
        report = RunReport(
            scenario=sc.name, N=N, p=self.kind.p, step=h, seed=sc.seed, smoothing_k=self.cfg.k,
            disturbance={"kind": sc.disturbance_kind, "bound": sc.disturbance_bound},
            saturation_bound=sc.saturation,
        )
        traj = Trajectory()
        started = _time.perf_counter()
        noise = DisturbanceSource(sc.disturbance_bound, sc.seed, sc.disturbance_kind)
        H = self.horizon()
        if math.isinf(H):
            raise InfeasibleTask("formula horizon is unbounded; set 'duration' in the scenario")
        end_k = int(round(H / h))
        try:
            rho_opts = task_optima(self.tasks, sc.x0, self.cfg)
            z = initialize(self.tasks, self.kind, sc.x0, self.cfg, self.policy, self.settings, rho_opts)
            report.episodes.append(_episode(1, z.params))
            k = 0
            k_delta = 0
            x = np.array(sc.x0, dtype=float)
            while True:
                # discrete transitions at the current instant, in order
                while z.q <= N:
                    body = self.compiled[z.q - 1]
                    rho = body.value(x)
                    decision = jump_condition(z, self.tasks, self.kind, self.cfg, rho)
                    if decision == STAY:
                        break
                    if decision == FAULT:
                        raise HybridFault(
                            f"task {z.q} window elapsed without completion at t={k * h:.4f} "
                            f"(rho={rho:.6g}, r={z.params.r:.6g})")
                    next_body = self.compiled[z.q] if z.q < N else None
                    z, rec = jump(z, self.tasks, self.kind, self.cfg, self.policy, self.settings,
                                  rho_opts, rho, next_body)
                    report.jumps.append(rec)
                    k_delta = k
                    if z.q <= N:
                        report.episodes.append(_episode(z.q, z.params))
                q_active = min(z.q, N)
                body = self.compiled[q_active - 1]
                rho, _ = body.value_and_grad(x)
                lo, hi = z.params.lower(z.t), z.params.rho_max
                if z.q <= N:
                    report.min_lower_margin = min(report.min_lower_margin, rho - lo)
                    report.min_upper_margin = min(report.min_upper_margin, hi - rho)
                done = z.q > N and k >= end_k
                u = control_input(self.sys, body, z.params, x, z.t, self.cfg)
                w = noise.sample(k * h, self.sys.n)
                u_inf = float(np.max(np.abs(u))) if u.size else 0.0
                report.max_u_inf = max(report.max_u_inf, u_inf)
                if sc.saturation is not None and u_inf > sc.saturation:
                    report.saturation_exceedances += 1
                traj.append(k * h, z.q, x, rho, lo, hi, u, w)
                if done:
                    break
                if k > end_k + 1 and z.q <= N:
                    raise HybridFault(f"formula horizon {H} reached with task {z.q} still active")
                x = integrate_step(self.sys, u, w, x, h)
                k += 1
                z = replace(z, x=x, t=(k - k_delta) * h)
        except StlFunnelError as exc:
            report.error = str(exc)
            report.wall_time_s = _time.perf_counter() - started
            raise RunAborted(exc, traj, report) from exc
        report.completed = True
        report.wall_time_s = _time.perf_counter() - started
        self._verdict(report, traj)
        return traj, report

    def _verdict(self, report, traj):
        report.r_min = min(_settings(self.settings, t.index).r for t in self.tasks)
        report.rho_max_min = min(e["rho_max"] for e in report.episodes)
        try:
            report.monitor_rho = exact_robustness(self.sc.formula, traj, 0.0)
        except StlFunnelError as exc:
            report.error = f"monitor: {exc}"
            return
        report.claim_lower_holds = report.r_min < report.monitor_rho
        report.claim_upper_holds = report.monitor_rho < report.rho_max_min


def run(scenario):
    """Simulate the closed loop of ``scenario`` to the formula horizon.

    Returns ``(trajectory, report)``; faults raise :class:`RunAborted` carrying
    the partial trajectory and report.
    """
    return _Executor(scenario).run()
