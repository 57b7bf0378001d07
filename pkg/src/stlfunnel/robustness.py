"""Space robustness: smooth non-temporal semantics and the exact offline monitor.

Conjunctions are smoothed with an n-ary log-sum-exp softmin at temperature k,

    softmin_k(r_1..r_n) = -(1/k) ln sum_i exp(-k r_i),

which under-approximates min(r_i) by at most ln(n)/k. k = 1 is the plain
two-argument form applied once; larger k sharpens toward the exact minimum.
The n-ary form is permutation invariant and equals any nesting of itself, so a
tree of And nodes collapses to one softmin over its leaves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    FragmentViolation,
    InfeasibleFormula,
    InsufficientHorizon,
    NonFiniteState,
)
from .stl_ast import (
    HALFSPACE,
    INF_BALL,
    Always,
    And,
    Eventually,
    NegPredicate,
    Predicate,
    SeqConj,
    SeqNest,
    TrueNode,
    atoms_of,
    desugar,
    horizon,
)


@dataclass(frozen=True)
class SmoothConfig:
    k: float = 1.0

    def __post_init__(self):
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ValueError(f"softmin temperature must be positive and finite, got {self.k}")


@dataclass(frozen=True)
class RobustnessResult:
    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class OptimumEstimate:
    rho_opt: float
    argmax: np.ndarray
    converged: bool
    iterations: int


def softmin(values, k=1.0):
    """Return ``(softmin_k(values), weights)``; weights are the gradient w.r.t. values.

    Stabilised by factoring out the minimum before exponentiating.
    """
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    if not finite.any():
        # every child is +inf (True); nothing constrains the conjunction
        return math.inf, np.zeros_like(v)
    m = v[finite].min()
    z = np.where(finite, np.exp(-k * (v - m)), 0.0)
    s = z.sum()
    return m - math.log(s) / k, z / s


def _check_state(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteState("state contains non-finite entries")
    return x


def smooth_robustness(body, x, cfg=SmoothConfig()):
    """Smooth robustness of a non-temporal body and its gradient at state ``x``.

    Evaluated recursively: each And node applies one softmin over its children.
    """
    x = _check_state(x)
    body = desugar(body, x.shape[0])
    value, grad = _smooth_rec(body, x, cfg.k)
    return RobustnessResult(value, grad)


def _smooth_rec(node, x, k):
    if isinstance(node, TrueNode):
        return math.inf, np.zeros_like(x)
    if isinstance(node, (Predicate, NegPredicate)):
        atom = node.atom
        if atom.kind != HALFSPACE:
            raise FragmentViolation(f"atom {atom.name!r} must be desugared before smooth evaluation")
        normal = np.asarray(atom.normal)
        val = atom.scale * (atom.offset - normal @ x)
        grad = -atom.scale * normal
        if isinstance(node, NegPredicate):
            return -val, -grad
        return float(val), grad
    if isinstance(node, And):
        parts = [_smooth_rec(c, x, k) for c in node.children]
        vals = [p[0] for p in parts]
        value, w = softmin(vals, k)
        grad = sum((wi * g for wi, (_, g) in zip(w, parts)), np.zeros_like(x))
        return value, grad
    raise FragmentViolation(f"smooth robustness is defined for non-temporal bodies only, got {type(node).__name__}")


class CompiledBody:
    """Affine leaves ``v = c + D x`` of a desugared body, for fast repeated evaluation.

    ``value_and_grad`` agrees with :func:`smooth_robustness` on the same body.
    """

    def __init__(self, body, n, cfg=SmoothConfig()):
        self.body = body
        self.n = n
        self.k = cfg.k
        rows, offs = [], []
        for sign, atom in _leaves(desugar(body, n)):
            normal = np.asarray(atom.normal, dtype=float)
            rows.append(-sign * atom.scale * normal)
            offs.append(sign * atom.scale * atom.offset)
        self.D = np.array(rows).reshape(len(rows), n)
        self.c = np.array(offs)

    def leaf_values(self, x):
        return self.c + self.D @ x

    def value(self, x):
        return self.value_and_grad(x)[0]

    def value_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState("state contains non-finite entries")
        if self.D.shape[0] == 0:
            return math.inf, np.zeros(self.n)
        v = self.c + self.D @ x
        m = v.min()
        z = np.exp(-self.k * (v - m))
        s = z.sum()
        w = z / s
        return m - math.log(s) / self.k, self.D.T @ w

    def hessian(self, x):
        v = self.c + self.D @ x
        _, w = softmin(v, self.k)
        Dw = self.D.T @ w
        return -self.k * ((self.D.T * w) @ self.D - np.outer(Dw, Dw))


def _leaves(node, sign=1.0):
    if isinstance(node, TrueNode):
        return []
    if isinstance(node, Predicate):
        return [(sign, node.atom)]
    if isinstance(node, NegPredicate):
        return [(-sign, node.atom)]
    if isinstance(node, And):
        out = []
        for c in node.children:
            out.extend(_leaves(c, sign))
        return out
    raise FragmentViolation(f"not a non-temporal body: {type(node).__name__}")


def ball_center_start(body, x_ref):
    """``x_ref`` with every inf-ball's selected coordinates moved to its center.

    Coordinates shared by several balls get the mean of their centers.
    """
    x = np.array(x_ref, dtype=float)
    acc = {}
    for atom in atoms_of(body):
        if atom.kind == INF_BALL:
            for i, c in zip(atom.selector, atom.center):
                acc.setdefault(i, []).append(c)
    if not acc:
        return None
    for i, cs in acc.items():
        x[i] = float(np.mean(cs))
    return x


def _ascend(f, x0, tol, max_iter):
    """Damped Newton ascent with Armijo backtracking on a smooth concave ``f``."""
    x = np.array(x0, dtype=float)
    val, g = f.value_and_grad(x)
    it = 0
    while it < max_iter:
        if np.max(np.abs(g)) < tol:
            return x, val, True, it
        it += 1
        H = f.hessian(x)
        mu = 1e-10 * (1.0 + np.abs(H).max())
        try:
            d = np.linalg.solve(-H + mu * np.eye(len(x)), g)
        except np.linalg.LinAlgError:
            d = g.copy()
        if not np.all(np.isfinite(d)) or g @ d <= 0:
            d = g.copy()
        radius = 10.0 * (1.0 + np.max(np.abs(x)))
        dmax = np.max(np.abs(d))
        if dmax > radius:
            d *= radius / dmax
        step, slope = 1.0, g @ d
        while True:
            x_new = x + step * d
            v_new, g_new = f.value_and_grad(x_new)
            if v_new >= val + 1e-4 * step * slope:
                break
            # near the optimum the value gain drops below rounding; fall back to
            # a decrease of the gradient norm
            if (v_new >= val - 1e-13 * (1.0 + abs(val))
                    and np.max(np.abs(g_new)) < np.max(np.abs(g))):
                break
            step *= 0.5
            if step < 1e-20:
                return x, val, False, it
        x, val, g = x_new, v_new, g_new
    return x, val, bool(np.max(np.abs(g)) < tol), it


def estimate_optimum(body, x_init, cfg=SmoothConfig(), tol=1e-8, max_iter=10000,
                     extra_starts=(), require_positive=True):
    """Global maximum of the smooth robustness of a concave body.

    Starts from ``x_init``, from each of ``extra_starts`` and from the inf-ball
    centers of ``body`` (if any); the best result wins. Raises
    :class:`InfeasibleFormula` (carrying the estimate) when the optimum is not
    positive and ``require_positive`` is set.
    """
    x_init = _check_state(x_init)
    f = CompiledBody(body, x_init.shape[0], cfg)
    starts = [x_init, *[np.asarray(s, dtype=float) for s in extra_starts]]
    centered = ball_center_start(body, x_init)
    if centered is not None:
        starts.append(centered)
    best = None
    for s in starts:
        x, val, ok, it = _ascend(f, s, tol, max_iter)
        est = OptimumEstimate(float(val), x, ok, it)
        if best is None or est.rho_opt > best.rho_opt:
            best = est
    if require_positive and not best.rho_opt > 0:
        err = InfeasibleFormula(
            f"smooth robustness optimum {best.rho_opt:.6g} is not positive (k={cfg.k})")
        err.estimate = best
        raise err
    return best


# -- exact monitor ----------------------------------------------------------

_GRID_TOL = 1e-9


def _trace_arrays(trace):
    if isinstance(trace, tuple):
        times, states = trace
    else:
        times, states = trace.times, trace.states
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[0] != times.shape[0]:
        raise ValueError("trace must provide times (T,) and states (T, n)")
    return times, states


def _step(times):
    if len(times) < 2:
        return 1.0
    return float(times[1] - times[0])


def _offsets(a, b, h):
    lo = math.ceil(a / h - _GRID_TOL)
    hi = math.floor(b / h + _GRID_TOL)
    if hi < lo:
        # window narrower than one sample: use the sample nearest to its start
        lo = hi = int(round(a / h))
    return lo, hi


def _window_extremum(sig, lo, hi, op):
    T = sig.shape[0]
    out = np.full(T, np.nan)
    width = hi - lo + 1
    n_valid = T - hi
    if n_valid <= 0:
        return out
    view = np.lib.stride_tricks.sliding_window_view(sig[lo:], width)[:n_valid]
    out[:n_valid] = op(view, axis=1)
    return out


def _signal(node, states, h):
    """Robustness signal of ``node`` at every sample (nan where the trace is too short)."""
    if isinstance(node, TrueNode):
        return np.full(states.shape[0], np.inf)
    if isinstance(node, Predicate):
        return np.asarray(node.atom.value(states), dtype=float)
    if isinstance(node, NegPredicate):
        return -np.asarray(node.atom.value(states), dtype=float)
    if isinstance(node, (And, SeqConj)):
        return np.min([_signal(c, states, h) for c in node.children], axis=0)
    if isinstance(node, (Always, Eventually)):
        if math.isinf(node.b):
            raise InsufficientHorizon("unbounded windows cannot be monitored on a finite trace")
        lo, hi = _offsets(node.a, node.b, h)
        op = np.min if isinstance(node, Always) else np.max
        return _window_extremum(_signal(node.child, states, h), lo, hi, op)
    if isinstance(node, SeqNest):
        rest = _signal(node.terminal, states, h)
        for a, b, psi in reversed(node.steps):
            lo, hi = _offsets(a, b, h)
            inner = np.minimum(_signal(psi, states, h), rest)
            rest = _window_extremum(inner, lo, hi, np.max)
        return rest
    raise TypeError(f"not a formula node: {node!r}")


def exact_robustness(root, trace, t0=0.0):
    """Exact (min/max) space robustness of ``root`` over a sampled trace at ``t0``.

    ``trace`` is a Trajectory or a ``(times, states)`` pair on a uniform grid.
    Windows are closed; samples are matched by nearest neighbour in time.
    """
    times, states = _trace_arrays(trace)
    if times.size == 0:
        raise InsufficientHorizon("empty trace")
    H = horizon(root)
    if math.isinf(H) or t0 + H > times[-1] + _GRID_TOL * max(1.0, abs(times[-1])) + 1e-12:
        raise InsufficientHorizon(
            f"trace ends at {times[-1]:g} but the formula needs data up to {t0 + H:g}")
    h = _step(times)
    i0 = int(round((t0 - times[0]) / h))
    sig = _signal(root, states, h)
    val = sig[i0]
    if np.isnan(val):
        raise InsufficientHorizon("trace too short for the formula windows")
    return float(val)


def robustness_signal(root, trace):
    """Full robustness signal of ``root`` over the trace samples."""
    times, states = _trace_arrays(trace)
    return _signal(root, states, _step(times))
