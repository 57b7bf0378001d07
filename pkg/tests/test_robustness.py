import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import brute_force_robustness, central_difference, exact_softmin, grid_max
from stlfunnel.errors import InfeasibleFormula, InsufficientHorizon, NonFiniteState
from stlfunnel.robustness import (
    CompiledBody,
    SmoothConfig,
    estimate_optimum,
    exact_robustness,
    smooth_robustness,
    softmin,
)
from stlfunnel.stl_ast import (
    Always,
    And,
    Eventually,
    NegPredicate,
    Predicate,
    PredicateAtom,
    SeqConj,
    SeqNest,
    flatten_to_tasks,
)


def hs(name, normal, offset, scale=1.0):
    return Predicate(PredicateAtom.halfspace(name, normal, offset, scale))


def test_single_halfspace_value_and_gradient():
    res = smooth_robustness(hs("h", [2.0, -1.0], 3.0), np.array([0.5, 4.0]))
    assert res.value == pytest.approx(3.0 - (1.0 - 4.0))
    np.testing.assert_allclose(res.gradient, [-2.0, 1.0])


def test_two_zero_children():
    body = And((hs("a", [1.0, 0.0], 0.0), hs("b", [0.0, 1.0], 0.0)))
    res = smooth_robustness(body, np.zeros(2))
    assert res.value == pytest.approx(-math.log(2), abs=1e-15)
    np.testing.assert_allclose(res.gradient, [-0.5, -0.5])


def test_children_one_and_three():
    # values 1 and 3 at x = 0
    body = And((hs("a", [1.0], 1.0), hs("b", [1.0], 3.0)))
    res = smooth_robustness(body, np.zeros(1))
    expected = -math.log(math.exp(-1) + math.exp(-3))
    assert res.value == pytest.approx(expected, rel=1e-14)
    assert res.value == pytest.approx(0.87307, abs=5e-6)
    assert res.value <= 1.0


def test_negated_predicate_flips_sign():
    body = NegPredicate(PredicateAtom.halfspace("h", [1.0], 2.0))
    res = smooth_robustness(body, np.array([5.0]))
    assert res.value == pytest.approx(3.0)
    np.testing.assert_allclose(res.gradient, [1.0])


def test_non_finite_state():
    with pytest.raises(NonFiniteState):
        smooth_robustness(hs("h", [1.0], 0.0), np.array([np.nan]))
    with pytest.raises(NonFiniteState):
        CompiledBody(hs("h", [1.0], 0.0), 1).value_and_grad(np.array([np.inf]))


def test_softmin_is_stable_for_large_values():
    v, w = softmin([1e6, 1e6 + 1.0], 20.0)
    assert math.isfinite(v) and v <= 1e6
    assert w.sum() == pytest.approx(1.0)


# -- optimum estimation -----------------------------------------------------

def _ball_task(k):
    ball = PredicateAtom.inf_ball("goal", [0, 1], [3.0, -2.0], 0.1)
    root = Eventually(0, 5, Predicate(ball))
    _, (task,) = flatten_to_tasks(root, 2, 100.0)
    return task, SmoothConfig(k)


def test_ball_optimum_with_k_one_is_infeasible():
    task, cfg = _ball_task(1.0)
    f = CompiledBody(task.body, 2, cfg)
    oracle, _ = grid_max(f.value, (3.0, -2.0), 0.05, 101)
    with pytest.raises(InfeasibleFormula) as exc:
        estimate_optimum(task.body, np.zeros(2), cfg)
    est = exc.value.estimate.rho_opt
    assert est == pytest.approx(oracle, abs=1e-6)
    assert est == pytest.approx(0.1 - math.log(4), abs=1e-4)


def test_ball_optimum_with_k_twenty():
    task, cfg = _ball_task(20.0)
    f = CompiledBody(task.body, 2, cfg)
    oracle, arg = grid_max(f.value, (3.0, -2.0), 0.05, 101)
    est = estimate_optimum(task.body, np.zeros(2), cfg)
    assert est.converged
    assert est.rho_opt == pytest.approx(oracle, abs=1e-6)
    assert est.rho_opt == pytest.approx(0.1 - math.log(4) / 20, abs=1e-4)
    np.testing.assert_allclose(est.argmax, [3.0, -2.0], atol=1e-3)


def test_halfspace_with_box_has_positive_optimum():
    root = Eventually(0, 5, hs("h", [1.0], 5.0))
    _, (task,) = flatten_to_tasks(root, 1, 100.0)
    cfg = SmoothConfig(1.0)
    f = CompiledBody(task.body, 1, cfg)
    grid = np.linspace(-100, 5, 210001)
    oracle = max(f.value(np.array([g])) for g in grid[::10])
    est = estimate_optimum(task.body, np.array([0.0]), cfg)
    assert est.rho_opt > 0
    assert est.rho_opt == pytest.approx(oracle, abs=1e-3)
    assert est.rho_opt >= oracle - 1e-9


# -- exact monitor ----------------------------------------------------------

def test_monitor_constant_trace():
    atom = PredicateAtom.halfspace("h", [1.0], 0.3)
    times = np.arange(0, 10.01, 0.5)
    states = np.zeros((times.size, 1))
    assert exact_robustness(Always(0, 5, Predicate(atom)), (times, states), 0.0) == pytest.approx(0.3)


def test_monitor_linear_ramp():
    atom = PredicateAtom.halfspace("h", [-1.0], 0.0)  # h = x
    times = np.linspace(0, 10, 101)
    states = (-1.0 + times / 5.0)[:, None]
    assert exact_robustness(Eventually(0, 10, Predicate(atom)), (times, states), 0.0) == pytest.approx(1.0)


def test_monitor_short_trace():
    atom = PredicateAtom.halfspace("h", [1.0], 0.3)
    times = np.arange(0, 4.01, 1.0)
    with pytest.raises(InsufficientHorizon):
        exact_robustness(Always(0, 5, Predicate(atom)), (times, np.zeros((5, 1))), 0.0)


def test_nested_semantics_never_exceed_flattened():
    a = PredicateAtom.halfspace("a", [1.0], 1.0)
    b = PredicateAtom.halfspace("b", [-1.0], 0.0)
    nested = SeqNest(((0, 2, Predicate(a)),), Eventually(1, 2, Predicate(b)))
    flat = SeqConj((Eventually(0, 2, Predicate(a)), Eventually(1, 4, Predicate(b))))
    rng = np.random.default_rng(3)
    times = np.arange(0, 8.01, 0.5)
    for _ in range(50):
        states = rng.normal(size=(times.size, 1))
        assert exact_robustness(nested, (times, states)) <= exact_robustness(flat, (times, states))


# -- properties -------------------------------------------------------------

finite = st.floats(-50, 50, allow_nan=False)


@given(st.lists(finite, min_size=1, max_size=12), st.floats(0.05, 200))
def test_softmin_under_approximates(values, k):
    v, w = softmin(values, k)
    assert v <= min(values) + 1e-12
    assert min(values) - v <= math.log(len(values)) / k + 1e-12
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12
    assert v == pytest.approx(exact_softmin(values, k), abs=1e-9)


@st.composite
def random_body(draw, n=3):
    m = draw(st.integers(1, 6))
    kids = []
    for i in range(m):
        normal = draw(hnp.arrays(float, n, elements=st.floats(-3, 3)).filter(lambda a: np.abs(a).max() > 0.1))
        kids.append(hs(f"h{i}", normal, draw(st.floats(-2, 2)), draw(st.floats(0.5, 4))))
    return And(tuple(kids))


states3 = hnp.arrays(float, 3, elements=st.floats(-5, 5))


@given(random_body(), states3, st.floats(0.5, 40))
def test_compiled_body_matches_recursive_evaluation(body, x, k):
    cfg = SmoothConfig(k)
    rec = smooth_robustness(body, x, cfg)
    val, grad = CompiledBody(body, 3, cfg).value_and_grad(x)
    assert val == pytest.approx(rec.value, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(grad, rec.gradient, rtol=1e-10, atol=1e-12)


@given(random_body(), states3, states3, st.floats(0, 1), st.floats(0.5, 40))
def test_smooth_robustness_is_concave(body, x, y, lam, k):
    f = CompiledBody(body, 3, SmoothConfig(k)).value
    assert f(lam * x + (1 - lam) * y) >= lam * f(x) + (1 - lam) * f(y) - 1e-9


@given(random_body(), states3, st.floats(0.5, 20), st.floats(1.0, 5.0))
def test_sharper_temperature_never_lowers_value(body, x, k, factor):
    lo = smooth_robustness(body, x, SmoothConfig(k)).value
    hi = smooth_robustness(body, x, SmoothConfig(k * factor)).value
    assert hi >= lo - 1e-12


@given(random_body(), states3, st.floats(0.5, 10))
def test_gradient_matches_finite_differences(body, x, k):
    f = CompiledBody(body, 3, SmoothConfig(k))
    g = f.value_and_grad(x)[1]
    fd = central_difference(f.value, x)
    scale = max(1.0, np.abs(fd).max())
    assert np.abs(g - fd).max() <= 1e-4 * scale


@given(random_body(), states3, st.floats(0.5, 10))
def test_hessian_matches_gradient_differences(body, x, k):
    f = CompiledBody(body, 3, SmoothConfig(k))
    H = f.hessian(x)
    for i in range(3):
        fd = central_difference(lambda z: f.value_and_grad(z)[1][i], x)
        np.testing.assert_allclose(H[i], fd, atol=1e-4 * max(1.0, np.abs(H).max()))


@st.composite
def monitor_instances(draw):
    h = draw(st.sampled_from([0.25, 0.5, 1.0]))
    T = draw(st.integers(20, 50))
    times = np.arange(T) * h
    states = draw(hnp.arrays(float, (T, 2), elements=st.floats(-3, 3)))
    atoms = [PredicateAtom.halfspace(f"h{i}", draw(hnp.arrays(float, 2, elements=st.floats(-2, 2)).filter(
        lambda a: np.abs(a).max() > 0.1)), draw(st.floats(-1, 1))) for i in range(3)]

    def lit():
        a = draw(st.sampled_from(atoms))
        return NegPredicate(a) if draw(st.booleans()) else Predicate(a)

    def body():
        kids = tuple(lit() for _ in range(draw(st.integers(1, 3))))
        return kids[0] if len(kids) == 1 else And(kids)

    def win(limit):
        a = draw(st.integers(0, limit)) * h
        return a, a + draw(st.integers(0, limit)) * h

    def atomic(limit):
        a, b = win(limit)
        return (Always if draw(st.booleans()) else Eventually)(a, b, body())

    shape = draw(st.sampled_from(["atomic", "conj", "nest"]))
    if shape == "atomic":
        node = atomic(6)
    elif shape == "conj":
        first = atomic(4)
        a = first.b + draw(st.integers(0, 3)) * h
        b = a + draw(st.integers(0, 4)) * h
        node = SeqConj((first, (Always if draw(st.booleans()) else Eventually)(a, b, body())))
    else:
        steps = tuple((*win(3), body()) for _ in range(draw(st.integers(1, 2))))
        node = SeqNest(steps, atomic(3))
    return node, times, states


@given(monitor_instances())
def test_monitor_matches_brute_force(instance):
    node, times, states = instance
    oracle = brute_force_robustness(node, times, states, 0)
    if oracle is None:
        with pytest.raises(InsufficientHorizon):
            exact_robustness(node, (times, states), 0.0)
    else:
        assert exact_robustness(node, (times, states), 0.0) == oracle
