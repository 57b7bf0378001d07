import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import bisect_root
from stlfunnel.errors import DeadlinePassed, FunnelViolation, InfeasibleTask, InvalidRhoMax
from stlfunnel.funnel import (
    FunnelParams,
    PerformanceFunction,
    SelectionPolicy,
    performance_value,
    select_funnel_parameters,
    transform_error,
    transform_map,
)
from stlfunnel.stl_ast import Always, Eventually, Predicate, PredicateAtom, flatten_to_tasks

# h(x) = -x on a scalar state, so rho = -x
RHO_IS_MINUS_X = Predicate(PredicateAtom.halfspace("h", [1.0], 0.0))


def task_of(root):
    return flatten_to_tasks(root, 1)[1][0]


def test_performance_function_values():
    perf = PerformanceFunction(2.0, 0.1, 0.5)
    assert performance_value(perf, 0.0)[0] == 2.0
    assert abs(performance_value(perf, 200.0)[0] - 0.1) <= 1e-12
    assert performance_value(perf, 2.0)[0] == pytest.approx(1.9 * math.exp(-1) + 0.1, rel=1e-14)
    # the four-digit reference value is only accurate to about 2e-5
    assert performance_value(perf, 2.0)[0] == pytest.approx(0.79895, abs=1e-4)
    assert performance_value(perf, 2.0)[1] == pytest.approx(-0.5 * 1.9 * math.exp(-1))


def test_performance_function_rejects_increasing_envelope():
    with pytest.raises(ValueError):
        PerformanceFunction(0.1, 0.2, 1.0)
    with pytest.raises(ValueError):
        PerformanceFunction(1.0, 0.0, 1.0)


def _params(rho_max=1.0, gamma=1.0):
    return FunnelParams(0.0, 0.0, rho_max, PerformanceFunction(gamma, gamma, 0.0))


def test_transform_midpoint():
    err = transform_error(0.5, _params(), 0.0)
    assert (err.e, err.xi, err.eps) == (-0.5, -0.5, 0.0)


@pytest.mark.parametrize("xi, expected", [(-0.2, math.log(4)), (-0.8, -math.log(4))])
def test_transform_values(xi, expected):
    assert transform_map(xi) == pytest.approx(expected, rel=1e-14)
    assert transform_error(1.0 + xi, _params(), 0.0).eps == pytest.approx(expected, rel=1e-12)


def test_transform_limits():
    assert transform_map(-1 + 1e-9) < -20
    assert transform_map(-1e-9) > 20


@pytest.mark.parametrize("rho, side", [(-0.5, "lower"), (0.0, "lower"), (1.0, "upper"), (1.3, "upper")])
def test_funnel_violation_sides(rho, side):
    with pytest.raises(FunnelViolation) as exc:
        transform_error(rho, _params(), 0.0)
    assert exc.value.side == side


def test_selection_constrained_branch():
    # r=0, rho=-0.9, rho_opt=1.2, rho_max=1, tau=5
    task = task_of(Eventually(0, 5, RHO_IS_MINUS_X))
    p = select_funnel_parameters(task, np.array([0.9]), 0.0, 1.0, 0.0, 1, rho_opt=1.2)
    assert p.t_star == 5 and p.tau == 5
    assert p.perf.gamma0 == pytest.approx(2.09, rel=1e-14)
    assert p.perf.gamma_inf == pytest.approx(0.1, rel=1e-14)
    assert p.perf.l == pytest.approx(-math.log(0.9 / 1.99) / 5, rel=1e-14)
    # the quoted decimal 0.15875 is a rounded figure; the exact value is 0.158699
    assert p.perf.l == pytest.approx(0.15875, abs=1e-4)
    # independent root of -gamma(5) + rho_max = r in l
    root = bisect_root(lambda l: -PerformanceFunction(2.09, 0.1, l)(5.0) + 1.0, 0.0, 5.0)
    assert p.perf.l == pytest.approx(root, abs=1e-12)
    assert p.lower(5.0) == pytest.approx(0.0, abs=1e-12)


def test_selection_immediate_deadline_infeasible():
    task = task_of(Always(0, 5, RHO_IS_MINUS_X))
    with pytest.raises(InfeasibleTask) as exc:
        select_funnel_parameters(task, np.array([0.5]), 0.0, None, 0.0, 1, rho_opt=1.0)
    assert exc.value.task == 1


def test_selection_immediate_deadline_free_branch():
    task = task_of(Always(0, 5, RHO_IS_MINUS_X))
    p = select_funnel_parameters(task, np.array([-0.2]), 0.0, 1.0, 0.0, 1, rho_opt=1.5)
    assert p.tau == 0 and p.t_star == 0
    assert 0.8 < p.perf.gamma0 <= 1.0
    assert p.perf.gamma0 == pytest.approx(0.88, rel=1e-14)
    assert p.perf.l == SelectionPolicy().l_free
    assert -p.perf.gamma0 + p.rho_max >= 0


def test_selection_rejects_rho_max_outside_interval():
    task = task_of(Eventually(0, 5, RHO_IS_MINUS_X))
    with pytest.raises(InvalidRhoMax):
        select_funnel_parameters(task, np.array([0.9]), 0.0, 1.3, 0.0, 1, rho_opt=1.2)


def test_selection_deadline_passed():
    task = task_of(Eventually(0, 5, RHO_IS_MINUS_X))
    with pytest.raises(DeadlinePassed):
        select_funnel_parameters(task, np.array([0.9]), 0.0, None, 6.0, 1, rho_opt=1.2)


def test_default_rho_max_and_t_star_override():
    task = task_of(Eventually(2, 8, RHO_IS_MINUS_X))
    p = select_funnel_parameters(task, np.array([-0.4]), 0.1, None, 0.0, 1, rho_opt=1.4, t_star=3.0)
    assert p.t_star == 3.0
    assert p.rho_max == pytest.approx(0.4 + 0.9 * (1.4 - 0.4))
    with pytest.raises(InfeasibleTask):
        select_funnel_parameters(task, np.array([-0.4]), 0.1, None, 0.0, 1, rho_opt=1.4, t_star=9.0)


def test_nested_chain_deadline_is_local():
    # p = 0: the deadline does not shift with the switching time
    task = task_of(Eventually(0, 5, RHO_IS_MINUS_X))
    p = select_funnel_parameters(task, np.array([0.9]), 0.0, 1.0, 42.0, 0, rho_opt=1.2)
    assert p.tau == 5


# -- properties -------------------------------------------------------------

@given(st.floats(0.01, 50), st.floats(0.01, 1.0), st.floats(0, 5), st.floats(0, 20), st.floats(0, 20))
def test_gamma_non_increasing(g0, frac, l, t1, dt):
    perf = PerformanceFunction(g0, g0 * frac, l)
    assert perf(t1) >= perf(t1 + dt)
    assert performance_value(perf, t1)[1] <= 0


@given(st.floats(-1 + 1e-6, -1e-6), st.floats(-1 + 1e-6, -1e-6))
def test_transform_strictly_increasing(a, b):
    if a < b:
        assert transform_map(a) < transform_map(b)


@st.composite
def feasible_selection(draw):
    r = draw(st.floats(0, 0.5))
    rho_opt = draw(st.floats(r + 0.05, 5))
    rho = draw(st.floats(-10, rho_opt - 0.02))
    tau = draw(st.floats(0.5, 20))
    if max(0.0, rho) >= rho_opt * 0.999:
        rho = -1.0
    eta = draw(st.floats(0.05, 0.95))
    margin = draw(st.floats(0.01, 3))
    frac = draw(st.floats(0.01, 0.95))
    return r, rho_opt, rho, tau, SelectionPolicy(eta, margin, frac, draw(st.floats(0, 1)))


@given(feasible_selection())
def test_selection_postconditions(case):
    r, rho_opt, rho, tau, policy = case
    task = task_of(Eventually(0, tau, RHO_IS_MINUS_X))
    floor = max(0.0, rho)
    if not r < floor + policy.eta * (rho_opt - floor):
        return
    p = select_funnel_parameters(task, np.array([-rho]), r, None, 0.0, 1, policy=policy, rho_opt=rho_opt)
    xi0 = (rho - p.rho_max) / p.perf(0.0)
    assert -1 < xi0 < 0
    assert p.lower(p.tau) >= r - 1e-9
    assert 0 < p.perf.gamma_inf <= min(p.perf.gamma0, p.rho_max - r) + 1e-15
    if -p.perf.gamma0 + p.rho_max < r:
        assert abs(-p.perf(p.tau) + p.rho_max - r) <= 1e-9
