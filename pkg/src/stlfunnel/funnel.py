"""Performance functions, the error transformation and funnel parameter selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    DeadlinePassed,
    FunnelViolation,
    InfeasibleFormula,
    InfeasibleTask,
    InvalidRhoMax,
)
from .robustness import CompiledBody, SmoothConfig, ball_center_start, estimate_optimum
from .stl_ast import ALWAYS

# time comparisons on the step grid
TIME_TOL = 1e-9
GUARD = 1e-12


@dataclass(frozen=True)
class PerformanceFunction:
    """gamma(t) = (gamma0 - gamma_inf) exp(-l t) + gamma_inf."""

    gamma0: float
    gamma_inf: float
    l: float

    def __post_init__(self):
        if not (self.gamma0 >= self.gamma_inf > 0):
            raise ValueError(f"need gamma0 >= gamma_inf > 0, got {self.gamma0}, {self.gamma_inf}")
        if not self.l >= 0:
            raise ValueError(f"decay rate must be nonnegative, got {self.l}")

    def __call__(self, t):
        return (self.gamma0 - self.gamma_inf) * math.exp(-self.l * t) + self.gamma_inf


def performance_value(perf, t):
    """Return ``(gamma(t), d gamma / dt)``."""
    decay = math.exp(-perf.l * t)
    return ((perf.gamma0 - perf.gamma_inf) * decay + perf.gamma_inf,
            -perf.l * (perf.gamma0 - perf.gamma_inf) * decay)


@dataclass(frozen=True)
class FunnelParams:
    t_star: float
    r: float
    rho_max: float
    perf: PerformanceFunction
    # episode-local deadline t_star - p*Delta
    tau: float = 0.0
    rho_opt: float = math.inf
    rho_switch: float = math.nan

    def lower(self, t):
        return -self.perf(t) + self.rho_max

    def as_dict(self):
        raw = {
            "t_star": self.t_star, "r": self.r, "rho_max": self.rho_max,
            "gamma0": self.perf.gamma0, "gamma_inf": self.perf.gamma_inf, "l": self.perf.l,
            "tau": self.tau, "rho_opt": self.rho_opt, "rho_switch": self.rho_switch,
        }
        return {k: None if v is None else float(v) for k, v in raw.items()}


@dataclass(frozen=True)
class ErrorTriple:
    e: float
    xi: float
    eps: float


def transform_map(xi):
    """S(xi) = ln(-(xi + 1) / xi) on (-1, 0)."""
    return math.log(-(xi + 1.0) / xi)


def transform_error(rho_psi, params, t):
    """Funnel error, its normalisation and the transformed error at local time ``t``."""
    gamma = params.perf(t)
    e = rho_psi - params.rho_max
    xi = e / gamma
    if not xi > -1.0 + GUARD:
        raise FunnelViolation("lower", (xi + 1.0) * gamma,
                              f"rho={rho_psi:.6g}, lower bound={params.rho_max - gamma:.6g}, t={t:.4f}")
    if not xi < -GUARD:
        raise FunnelViolation("upper", -e, f"rho={rho_psi:.6g}, rho_max={params.rho_max:.6g}, t={t:.4f}")
    return ErrorTriple(e, xi, transform_map(xi))


@dataclass(frozen=True)
class SelectionPolicy:
    """Defaults for the free choices left inside the admissible parameter intervals."""

    eta: float = 0.9
    gamma0_margin: float = 0.1
    gamma_inf_fraction: float = 0.1
    l_free: float = 0.1

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not self.gamma0_margin > 0:
            raise ValueError("gamma0_margin must be positive")
        # a fraction of 1 would make the closed-form decay rate infinite
        if not 0 < self.gamma_inf_fraction < 1:
            raise ValueError("gamma_inf_fraction must lie in (0, 1)")
        if not self.l_free >= 0:
            raise ValueError("l_free must be nonnegative")


def choose_t_star(task, p, override=None):
    lo, hi = task.window
    if task.kind == ALWAYS:
        if override is not None and abs(override - lo) > TIME_TOL:
            raise InfeasibleTask(f"always-task t_star is fixed to the window start {lo}", task.index)
        return lo
    if override is not None:
        if not lo - TIME_TOL <= override <= hi + TIME_TOL:
            raise InfeasibleTask(f"t_star {override} outside window [{lo}, {hi}]", task.index)
        return float(override)
    if math.isinf(hi):
        raise InfeasibleTask("unbounded eventually-window needs an explicit t_star", task.index)
    return hi


def select_funnel_parameters(task, x_switch, r=0.0, rho_max_request=None, delta=0.0, p=1,
                             cfg=SmoothConfig(), policy=SelectionPolicy(), *,
                             rho_opt=None, t_star=None, compiled=None):
    """Pick (t_star, rho_max, gamma0, gamma_inf, l) for ``task`` at a switching instant.

    ``delta`` is the global switching time; deadlines are shifted by ``p * delta``
    into episode-local time. ``rho_opt`` is estimated when not supplied.
    """
    x_switch = np.asarray(x_switch, dtype=float)
    q = task.index
    if r < 0:
        raise InfeasibleTask(f"robustness margin r={r} must be nonnegative", q)
    f = compiled if compiled is not None else CompiledBody(task.body, x_switch.shape[0], cfg)
    rho = f.value(x_switch)

    ts = choose_t_star(task, p, t_star)
    tau = ts - p * delta
    if abs(tau) <= TIME_TOL:
        tau = 0.0
    if tau < 0:
        raise DeadlinePassed(f"task {q}: deadline {ts} already passed at switch time {delta}")
    if tau == 0 and not rho > r:
        raise InfeasibleTask(
            f"deadline is immediate and robustness {rho:.6g} does not exceed r={r:.6g} (not feasible)", q)

    if rho_opt is None:
        extra = []
        if task.source_body is not None:
            start = ball_center_start(task.source_body, x_switch)
            if start is not None:
                extra.append(start)
        try:
            rho_opt = estimate_optimum(task.body, x_switch, cfg, extra_starts=extra).rho_opt
        except InfeasibleFormula as exc:
            raise InfeasibleTask(str(exc), q) from exc
    if not rho_opt > 0:
        raise InfeasibleTask(f"smooth optimum {rho_opt:.6g} is not positive", q)

    floor = max(0.0, rho)
    if not rho_opt > floor:
        raise InfeasibleTask(f"robustness {rho:.6g} already at the optimum {rho_opt:.6g}", q)
    if rho_max_request is not None:
        if not floor < rho_max_request < rho_opt:
            raise InvalidRhoMax(
                f"task {q}: rho_max {rho_max_request} outside ({floor:.6g}, {rho_opt:.6g})")
        rho_max = float(rho_max_request)
    else:
        rho_max = floor + policy.eta * (rho_opt - floor)
    if not r < rho_max:
        raise InvalidRhoMax(f"task {q}: r={r} must lie below rho_max={rho_max:.6g}")

    gamma0 = (rho_max - rho) * (1.0 + policy.gamma0_margin)
    if tau == 0:
        gamma0 = min(gamma0, rho_max - r)
    gamma_inf = min(policy.gamma_inf_fraction * (rho_max - r), gamma0)

    if -gamma0 + rho_max >= r:
        l = policy.l_free
    else:
        l = -math.log((r + gamma_inf - rho_max) / (-(gamma0 - gamma_inf))) / tau

    perf = PerformanceFunction(gamma0, gamma_inf, l)
    params = FunnelParams(ts, r, rho_max, perf, tau, rho_opt, rho)

    xi0 = (rho - rho_max) / gamma0
    if not -1 < xi0 < 0:
        raise InfeasibleTask(f"initial normalised error {xi0} outside (-1, 0)", q)
    if not params.lower(tau) >= r - 1e-9:
        raise InfeasibleTask(f"lower funnel {params.lower(tau):.6g} below r at the deadline", q)
    return params
