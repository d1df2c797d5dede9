import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagrangekit.core import (
    ConstrainedProblem,
    ContractError,
    DualState,
    Evaluation,
    EvaluationError,
    evaluate,
    feasible,
    lagrangian_grad_x,
    lagrangian_value,
    penalized_value,
    violations,
)
from lagrangekit.problems import concave2d_problem, concave2d_solution, convexquad_problem


def scalar_eval(f, g):
    return Evaluation(f, np.array([g]), np.zeros(0), np.zeros(1), np.zeros((1, 1)), np.zeros((0, 1)))


def test_evaluate_concave_origin():
    ev = evaluate(concave2d_problem(0.5), [0.0, 0.0])
    assert ev.f == 1.0
    assert ev.g[0] == 0.0


def test_evaluate_concave_endpoint():
    ev = evaluate(concave2d_problem(0.5), [math.pi / 2, 0.0])
    assert abs(ev.f) < 1e-15
    assert ev.g[0] == 1.0


def test_evaluate_convexquad():
    ev = evaluate(convexquad_problem(), [3.0])
    assert ev.f == 9.0
    assert ev.g[0] == -2.0


def test_evaluate_wrong_shape():
    with pytest.raises(ContractError):
        evaluate(convexquad_problem(), [1.0, 2.0])


def test_nonfinite_component_named():
    def bad(x):
        return Evaluation(0.0, np.array([np.nan]), np.zeros(0), np.zeros(1), np.zeros((1, 1)), np.zeros((0, 1)))

    p = ConstrainedProblem("bad", 1, 1, 0, bad, np.zeros(1), np.zeros(0), np.zeros(1) - 1, np.ones(1), np.zeros(1))
    with pytest.raises(EvaluationError, match="g"):
        evaluate(p, [0.0])


def test_lagrangian_value_examples():
    levels = (np.array([0.5]), np.zeros(0))
    assert lagrangian_value(scalar_eval(1.0, 0.0), DualState.from_values([1.0]), levels) == 0.5
    assert lagrangian_value(scalar_eval(3.2, 0.9), DualState.from_values([0.0]), levels) == 3.2
    ev = scalar_eval(0.866025, 0.5)
    assert lagrangian_value(ev, DualState.from_values([0.57735]), levels) == pytest.approx(0.866025, abs=1e-15)


def test_lagrangian_value_shape_mismatch():
    with pytest.raises(ContractError):
        lagrangian_value(scalar_eval(1.0, 0.0), DualState.from_values([1.0, 2.0]), (np.zeros(1), np.zeros(0)))


def test_penalized_value_examples():
    p = concave2d_problem(0.5)
    ev = evaluate(p, [math.pi / 2, 0.0])
    assert penalized_value(ev, [0.3]) == pytest.approx(0.3, abs=1e-15)
    assert penalized_value(ev, [0.0]) == ev.f
    ev = evaluate(convexquad_problem(), [1.0])
    assert penalized_value(ev, [2.0]) == 1.0


def test_penalized_value_negative_coefficient():
    with pytest.raises(ContractError):
        penalized_value(scalar_eval(1.0, 0.0), [-0.1])


def test_lagrangian_grad_examples():
    p = concave2d_problem(0.5)
    x, y, lam, _ = concave2d_solution(0.5)
    grad = lagrangian_grad_x(evaluate(p, [x, y]), DualState.from_values([lam]))
    assert np.max(np.abs(grad)) <= 1e-12
    ev = evaluate(p, [0.0, 0.0])
    np.testing.assert_array_equal(lagrangian_grad_x(ev, DualState.from_values([0.0])), ev.grad_f)
    np.testing.assert_allclose(lagrangian_grad_x(ev, DualState.from_values([1.0])), [1.0, 0.0])


def test_violations_and_feasible():
    levels = (np.array([0.5]), np.zeros(0))
    ev = scalar_eval(0.0, 0.6)
    assert violations(ev, levels).viol_g[0] == pytest.approx(0.1)
    assert not feasible(ev, levels, tol=0.0)
    ev = scalar_eval(0.0, 0.5)
    assert violations(ev, levels).viol_g[0] == 0.0
    assert feasible(ev, levels, tol=0.0)
    p = concave2d_problem(0.3)
    x, y, _, _ = concave2d_solution(0.3)
    ev = evaluate(p, [x, y])
    assert abs(violations(ev, p.levels).viol_g[0]) < 1e-15
    assert feasible(ev, p.levels)


def test_feasible_negative_tol():
    with pytest.raises(ContractError):
        feasible(scalar_eval(0.0, 0.0), (np.zeros(1), np.zeros(0)), tol=-1.0)


def test_empty_domain_rejected():
    with pytest.raises(ContractError):
        ConstrainedProblem("e", 1, 0, 0, None, np.zeros(0), np.zeros(0), np.ones(1), np.zeros(1), np.zeros(1))


def test_projection_idempotent(rng):
    p = concave2d_problem(0.5)
    for _ in range(1000):
        x = rng.uniform(-5, 5, 2)
        once = p.project(x)
        assert np.array_equal(p.project(once), once)
        assert p.in_domain(once)


reals = st.floats(-10, 10, allow_nan=False)
nonneg = st.floats(0, 10, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, math.pi / 2), st.floats(-3, 3), nonneg, nonneg, st.floats(0, 1))
def test_lagrangian_linear_in_duals(x, y, l1, l2, a):
    p = concave2d_problem(0.4)
    ev = evaluate(p, [x, y])
    mix = lagrangian_value(ev, DualState.from_values([a * l1 + (1 - a) * l2]), p.levels)
    sep = a * lagrangian_value(ev, DualState.from_values([l1]), p.levels) + (1 - a) * lagrangian_value(
        ev, DualState.from_values([l2]), p.levels
    )
    assert mix == pytest.approx(sep, rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, math.pi / 2), st.floats(-3, 3), nonneg, st.floats(0.05, 0.95))
def test_penalized_minus_lagrangian_is_level_term(x, y, lam, eps):
    p = concave2d_problem(eps)
    ev = evaluate(p, [x, y])
    diff = penalized_value(ev, [lam]) - lagrangian_value(ev, DualState.from_values([lam]), p.levels)
    assert diff == pytest.approx(lam * eps, rel=1e-12, abs=1e-12)
