import math

import numpy as np
import pytest

from lagrangekit.core import ContractError, DualState
from lagrangekit.diagnostics import (
    KktReport,
    certify,
    detect_oscillation,
    kkt_first_order,
    kkt_second_order,
    lagrangian_hessian,
)
from lagrangekit.optimizers import DualOptConfig, PrimalOptConfig, SchemeConfig, run
from lagrangekit.problems import concave2d_problem, concave2d_solution, convexquad_problem

EPS_GRID = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]


def test_first_order_at_solution():
    x, y, lam, _ = concave2d_solution(0.5)
    rep = kkt_first_order(concave2d_problem(0.5), [x, y], [lam])
    assert rep.first_order_pass
    assert rep.stationarity_residual <= 1e-6


def test_first_order_at_origin():
    rep = kkt_first_order(concave2d_problem(0.5), [0.0, 0.0], [0.0])
    assert rep.first_order_pass and rep.feasible


def test_first_order_convexquad():
    assert kkt_first_order(convexquad_problem(), [1.0], [2.0]).first_order_pass


def test_first_order_shape_mismatch():
    with pytest.raises(ContractError):
        kkt_first_order(concave2d_problem(0.5), [0.1, 0.0], [1.0, 2.0])


def test_first_order_rejects_negative_multiplier():
    rep = kkt_first_order(convexquad_problem(), [1.0], [-2.0])
    assert not rep.dual_sign_ok and not rep.first_order_pass


def test_first_order_infeasible():
    rep = kkt_first_order(concave2d_problem(0.5), [1.0, 0.0], [0.0])
    assert not rep.feasible and not rep.first_order_pass


def test_second_order_at_solution():
    x, y, lam, _ = concave2d_solution(0.5)
    verdict, eig = kkt_second_order(concave2d_problem(0.5), [x, y], [lam])
    assert verdict == "pass"
    assert eig == pytest.approx(2 / math.sqrt(0.75), abs=1e-4)


def test_second_order_at_origin_fails():
    verdict, eig = kkt_second_order(concave2d_problem(0.5), [0.0, 0.0], [0.0])
    assert verdict == "fail"
    assert eig == pytest.approx(-1.0, abs=1e-4)


def test_second_order_convexquad_vacuous():
    assert kkt_second_order(convexquad_problem(), [1.0], [2.0]) == ("pass", math.inf)


@pytest.mark.parametrize("eps", EPS_GRID)
def test_solution_grid_strict(eps):
    x, y, lam, _ = concave2d_solution(eps)
    rep = certify(concave2d_problem(eps), [x, y], [lam])
    assert rep.passed and rep.second_order == "pass"
    assert rep.stationarity_residual <= 1e-8
    assert lam > 0 and rep.comp_slack <= 1e-8


@pytest.mark.parametrize("point", [(0.3, 0.5), (0.52, 0.0), (0.0, 1.0), (math.pi / 2, -0.4)])
def test_hessian_asymmetry_small(point):
    p = concave2d_problem(0.5)
    H = lagrangian_hessian(p, point, DualState.from_values([0.7]), symmetrize=False)
    assert np.max(np.abs(H - H.T)) <= 1e-4


def test_hessian_analytic():
    # at (x, 0): L = cos x + lam sin x, so d2/dx2 = -cos x - lam sin x and d2/dy2 = 2 (cos x + lam sin x)
    x, lam = 0.4, 0.7
    H = lagrangian_hessian(concave2d_problem(0.5), [x, 0.0], DualState.from_values([lam]))
    a = math.cos(x) + lam * math.sin(x)
    np.testing.assert_allclose(H, [[-a, 0], [0, 2 * a]], atol=1e-6)


def test_report_text_roundtrip():
    rep = certify(concave2d_problem(0.5), [0.0, 0.0], [0.0])
    kv = dict(line.split("=", 1) for line in rep.to_text().splitlines())
    assert kv["second_order"] == "fail" and kv["verdict"] == "fail"
    assert list(kv) == KktReport.csv_header()
    assert len(rep.csv_row()) == len(KktReport.csv_header())


def test_oscillation_constant():
    rep = detect_oscillation(np.full(5000, 0.3))
    assert rep.verdict == "converged" and rep.amplitude == 0.0


def test_oscillation_short_trace():
    assert detect_oscillation(np.zeros(100)).verdict == "undetermined"


def test_oscillation_decaying():
    t = np.arange(4000)
    assert detect_oscillation(np.exp(-t / 300) * np.sin(t)).verdict in ("converged", "undetermined")


def _concave_run(kappa_p, stride=1):
    return run(concave2d_problem(0.5), SchemeConfig("lagrangian"), PrimalOptConfig("gd", 0.01),
               DualOptConfig("nupi", 0.3, kappa_p), 10000, stride=stride)


def test_plain_ga_oscillates_and_pi_converges():
    assert detect_oscillation(_concave_run(0.0)).verdict == "oscillating"
    assert detect_oscillation(_concave_run(40.0)).verdict == "converged"


@pytest.mark.parametrize("kappa_p", [0.0, 40.0])
def test_oscillation_subsampling_invariant(kappa_p):
    full = detect_oscillation(_concave_run(kappa_p))
    half = detect_oscillation(_concave_run(kappa_p, stride=2), window=500)
    assert full.verdict == half.verdict
