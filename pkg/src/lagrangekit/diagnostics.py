"""KKT certification and GDA oscillation detection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConstrainedProblem, ContractError, DualState, evaluate, lagrangian_grad_x, violations
from .optimizers import Trace, fmt, projected_gradient

TOL_FEAS = 1e-6
TOL_STAT = 1e-5
TOL_CS = 1e-6
TOL_ACTIVE = 1e-6
FD_STEP = 1e-5
MAX_SECOND_ORDER_DIM = 50


@dataclass
class KktReport:
    feasible: bool
    max_violation: float
    stationarity_residual: float
    comp_slack: float
    dual_sign_ok: bool
    first_order_pass: bool
    second_order: str = "skipped"  # pass | fail | skipped
    min_projected_eig: float = math.nan
    max_multiplier: float = 0.0

    @property
    def passed(self) -> bool:
        return self.first_order_pass and self.second_order != "fail"

    def as_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "max_violation": self.max_violation,
            "stationarity_residual": self.stationarity_residual,
            "comp_slack": self.comp_slack,
            "dual_sign_ok": self.dual_sign_ok,
            "first_order": "pass" if self.first_order_pass else "fail",
            "second_order": self.second_order,
            "min_projected_eig": self.min_projected_eig,
            "max_multiplier": self.max_multiplier,
            "verdict": "pass" if self.passed else "fail",
        }

    def to_text(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = fmt(v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def csv_header(cls) -> list[str]:
        return list(cls(False, 0.0, 0.0, 0.0, False, False).as_dict())

    def csv_row(self) -> list[str]:
        out = []
        for v in self.as_dict().values():
            out.append(str(v).lower() if isinstance(v, bool) else fmt(v) if isinstance(v, float) else str(v))
        return out


def _duals(problem: ConstrainedProblem, lam, mu) -> DualState:
    lam = np.zeros(problem.num_ineq) if lam is None else np.atleast_1d(np.asarray(lam, dtype=float))
    mu = np.zeros(problem.num_eq) if mu is None else np.atleast_1d(np.asarray(mu, dtype=float))
    if lam.shape != (problem.num_ineq,) or mu.shape != (problem.num_eq,):
        raise ContractError("multiplier lengths do not match the problem's constraint counts")
    return DualState.from_values(lam, mu)


def kkt_first_order(problem: ConstrainedProblem, x, lam=None, mu=None, tol_feas: float = TOL_FEAS,
                    tol_stat: float = TOL_STAT, tol_cs: float = TOL_CS,
                    tol_active: float = TOL_ACTIVE) -> KktReport:
    if min(tol_feas, tol_stat, tol_cs) <= 0:
        raise ContractError("tolerances must be positive")
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dim_primal,):
        raise ContractError("candidate x has the wrong length")
    dual = _duals(problem, lam, mu)
    ev = evaluate(problem, x)
    viol = violations(ev, problem.levels)
    max_viol = viol.max_violation()
    grad = projected_gradient(problem, x, lagrangian_grad_x(ev, dual), tol_active)
    stat = float(np.max(np.abs(grad), initial=0.0))
    cs = float(np.max(np.abs(dual.lam * viol.viol_g), initial=0.0))
    sign_ok = bool(np.all(dual.lam >= 0))
    feas = max_viol <= tol_feas
    max_mult = float(np.max(np.abs(np.r_[dual.lam, dual.mu]), initial=0.0))
    return KktReport(feas, max_viol, stat, cs, sign_ok, feas and stat <= tol_stat and cs <= tol_cs and sign_ok,
                     max_multiplier=max_mult)


def _grad_lagrangian(problem, x, dual):
    return lagrangian_grad_x(evaluate(problem, x), dual)


def lagrangian_hessian(problem: ConstrainedProblem, x, dual: DualState, fd_step: float = FD_STEP,
                       symmetrize: bool = True) -> np.ndarray:
    """Finite-difference Hessian of the Lagrangian in x.

    Central differences, falling back to one-sided ones where a step would
    leave the domain.
    """
    x = np.asarray(x, dtype=float)
    d = len(x)
    H = np.empty((d, d))
    g0 = None
    for j in range(d):
        e = np.zeros(d)
        e[j] = fd_step
        up_ok = x[j] + fd_step <= problem.upper[j]
        down_ok = x[j] - fd_step >= problem.lower[j]
        if up_ok and down_ok:
            H[:, j] = (_grad_lagrangian(problem, x + e, dual) - _grad_lagrangian(problem, x - e, dual)) / (2 * fd_step)
        else:
            if g0 is None:
                g0 = _grad_lagrangian(problem, x, dual)
            if up_ok:
                H[:, j] = (_grad_lagrangian(problem, x + e, dual) - g0) / fd_step
            else:
                H[:, j] = (g0 - _grad_lagrangian(problem, x - e, dual)) / fd_step
    return 0.5 * (H + H.T) if symmetrize else H


def _null_space(A: np.ndarray, d: int, rcond: float = 1e-10) -> np.ndarray:
    if A.size == 0:
        return np.eye(d)
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > rcond * max(1.0, s[0])))
    return vt[rank:].T


def kkt_second_order(problem: ConstrainedProblem, x, lam=None, mu=None, fd_step: float = FD_STEP,
                     tol_active: float = TOL_ACTIVE) -> tuple[str, float]:
    """Second-order sufficiency on the null space of strongly active constraints.

    A constraint (or domain bound) enters the null space only when it is
    active and carries a positive multiplier; weakly active ones leave the
    direction free. Returns ``(verdict, min eigenvalue)``.
    """
    x = np.asarray(x, dtype=float)
    d = problem.dim_primal
    if d > MAX_SECOND_ORDER_DIM:
        return "skipped", math.nan
    dual = _duals(problem, lam, mu)
    ev = evaluate(problem, x)
    viol = violations(ev, problem.levels)
    rows = [ev.jac_h]
    strong = (np.abs(viol.viol_g) <= tol_active) & (dual.lam > tol_active)
    rows.append(ev.jac_g[strong])
    # bound multipliers are read off the Lagrangian gradient
    grad = lagrangian_grad_x(ev, dual)
    at_lo = (x - problem.lower <= tol_active) & (grad > tol_active)
    at_hi = (problem.upper - x <= tol_active) & (grad < -tol_active)
    rows.append(np.eye(d)[at_lo | at_hi])
    A = np.vstack(rows)
    Z = _null_space(A, d)
    if Z.shape[1] == 0:
        return "pass", math.inf
    H = lagrangian_hessian(problem, x, dual, fd_step)
    min_eig = float(np.min(np.linalg.eigvalsh(Z.T @ H @ Z)))
    return ("pass" if min_eig > 0 else "fail"), min_eig


def certify(problem: ConstrainedProblem, x, lam=None, mu=None, *, second_order: bool = True,
            **tols) -> KktReport:
    fd_step = tols.pop("fd_step", FD_STEP)
    report = kkt_first_order(problem, x, lam, mu, **tols)
    if second_order:
        verdict, eig = kkt_second_order(problem, x, lam, mu, fd_step, tols.get("tol_active", TOL_ACTIVE))
        report.second_order, report.min_projected_eig = verdict, eig
    return report


@dataclass(frozen=True)
class OscillationReport:
    window: int
    amplitude: float
    previous_amplitude: float
    verdict: str  # oscillating | converged | undetermined


def detect_oscillation(trace, coord_index: int = 0, window: int = 1000,
                       amp_threshold: float = 1e-2) -> OscillationReport:
    """Classify the tail of a trajectory by its peak-to-peak amplitude.

    Oscillating means the last window's amplitude is at least the threshold
    and at least half of the penultimate window's (not decaying).
    """
    series = trace.coordinate(coord_index) if isinstance(trace, Trace) else np.asarray(trace, dtype=float)
    if series.ndim > 1:
        series = series[:, coord_index]
    if window < 1 or len(series) < 2 * window:
        return OscillationReport(window, 0.0, 0.0, "undetermined")
    last = series[-window:]
    prev = series[-2 * window:-window]
    amp = float(last.max() - last.min())
    prev_amp = float(prev.max() - prev.min())
    if amp < amp_threshold:
        verdict = "converged"
    elif amp >= 0.5 * prev_amp:
        verdict = "oscillating"
    else:
        verdict = "undetermined"
    return OscillationReport(window, amp, prev_amp, verdict)

