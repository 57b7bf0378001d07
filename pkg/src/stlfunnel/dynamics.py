"""Control-affine models, the RK4 step, disturbances and the trajectory record."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidLaplacian, NonFiniteState


@dataclass(frozen=True)
class SystemModel:
    """x' = f(x) + g(x) u + w."""

    n: int
    m: int
    f: Callable
    g: Callable
    description: str = ""
    dims_per_agent: int = 1


def build_consensus_system(L, dims_per_agent=2):
    """Single integrators coupled by the consensus protocol: f = -(L kron I) x, g = I."""
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise InvalidLaplacian("Laplacian must be square")
    if not np.allclose(L, L.T, atol=1e-12, rtol=0):
        raise InvalidLaplacian("Laplacian must be symmetric")
    if np.max(np.abs(L.sum(axis=1))) > 1e-12:
        raise InvalidLaplacian("Laplacian rows must sum to zero")
    off = L - np.diag(np.diag(L))
    if np.any(off > 1e-12):
        raise InvalidLaplacian("Laplacian off-diagonal entries must be nonpositive")
    A = -np.kron(L, np.eye(dims_per_agent))
    n = A.shape[0]
    eye = np.eye(n)
    return SystemModel(
        n, n, lambda x: A @ x, lambda x: eye,
        f"consensus: {L.shape[0]} agents x {dims_per_agent} dims", dims_per_agent,
    )


def single_integrator(n):
    zero = np.zeros(n)
    eye = np.eye(n)
    return SystemModel(n, n, lambda x: zero, lambda x: eye, f"single integrator, n={n}")


def linear_scalar(a=-1.0):
    """x' = a x + u, used for integrator checks."""
    return SystemModel(1, 1, lambda x: a * x, lambda x: np.eye(1), f"scalar linear, a={a}")


def min_gram_eigenvalue(sys, bound, samples=200, seed=0):
    """Smallest eigenvalue of g g^T over random points of the box ||x||_inf <= bound."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(samples):
        x = rng.uniform(-bound, bound, size=sys.n)
        G = np.atleast_2d(sys.g(x))
        worst = min(worst, np.linalg.eigvalsh(G @ G.T).min())
    return float(worst)


def integrate_step(sys, u, w, x, h):
    """One classical RK4 step with u and w held over the step."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)

    def rhs(y):
        return sys.f(y) + sys.g(y) @ u + w

    # overflow surfaces as NonFiniteState below rather than as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_new)):
        raise NonFiniteState("integration produced a non-finite state")
    return x_new


DISTURBANCE_KINDS = ("zero", "uniform", "sinusoidal")
GENERATOR_NAME = "numpy.random.PCG64"


@dataclass
class DisturbanceSource:
    """Bounded additive noise, ||w||_inf <= bound, reproducible from ``seed``."""

    bound: float = 0.0
    seed: int = 0
    kind: str = "uniform"
    _rng: np.random.Generator = field(init=False, repr=False)
    _phase: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        if self.kind not in DISTURBANCE_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if not self.bound >= 0:
            raise ValueError("disturbance bound must be nonnegative")
        self._rng = np.random.default_rng(self.seed)

    def sample(self, t, dim):
        if self.kind == "zero" or self.bound == 0:
            return np.zeros(dim)
        if self.kind == "uniform":
            return self._rng.uniform(-self.bound, self.bound, size=dim)
        if dim not in self._phase:
            self._phase[dim] = (self._rng.uniform(0.5, 5.0, size=dim),
                                self._rng.uniform(0.0, 2 * np.pi, size=dim))
        omega, phi = self._phase[dim]
        return self.bound * np.sin(omega * t + phi)


def sample_disturbance(src, t, dim):
    return src.sample(t, dim)


class Trajectory:
    """Samples of (time, mode, x, active rho, funnel bounds, u, w) on a uniform grid."""

    def __init__(self):
        self._rows = []

    def append(self, time, mode, x, rho, lo, hi, u, w):
        self._rows.append((float(time), int(mode), np.array(x, dtype=float), float(rho),
                           float(lo), float(hi), np.array(u, dtype=float), np.array(w, dtype=float)))

    def __len__(self):
        return len(self._rows)

    def _col(self, i):
        return np.array([r[i] for r in self._rows])

    @property
    def times(self):
        return self._col(0)

    @property
    def modes(self):
        return self._col(1).astype(int)

    @property
    def states(self):
        return np.array([r[2] for r in self._rows])

    @property
    def rho(self):
        return self._col(3)

    @property
    def funnel_lo(self):
        return self._col(4)

    @property
    def funnel_hi(self):
        return self._col(5)

    @property
    def inputs(self):
        return np.array([r[6] for r in self._rows])

    @property
    def disturbances(self):
        return np.array([r[7] for r in self._rows])

    def rows(self):
        return iter(self._rows)
