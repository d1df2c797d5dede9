"""Constrained-problem model shared by every solver.

A problem is ``min f(x)`` over a box domain subject to ``g(x) <= eps_g`` and
``h(x) = eps_h``. Evaluators return the values and all first derivatives in
one call so that constraint terms can share work with the objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DEFAULT_FEAS_TOL = 1e-6


class ContractError(ValueError):
    """Raised when a caller violates a documented precondition."""


class EvaluationError(RuntimeError):
    """Raised when an evaluator produces non-finite output."""


class GenerationError(RuntimeError):
    """Raised when a data generator cannot satisfy its specification."""


@dataclass(frozen=True)
class Evaluation:
    f: float
    g: np.ndarray
    h: np.ndarray
    grad_f: np.ndarray
    jac_g: np.ndarray
    jac_h: np.ndarray

    def check_finite(self) -> "Evaluation":
        # one sum catches NaN/inf; the slow path only names the component
        flat = np.concatenate((self.g, self.h, self.grad_f, self.jac_g.ravel(), self.jac_h.ravel()))
        if math.isfinite(self.f + flat.sum()):
            return self
        if not math.isfinite(self.f):
            raise EvaluationError("objective value f is not finite")
        for name in ("g", "h", "grad_f", "jac_g", "jac_h"):
            if not np.isfinite(getattr(self, name)).all():
                raise EvaluationError(f"evaluator component {name} is not finite")
        return self


@dataclass(frozen=True)
class ViolationVector:
    viol_g: np.ndarray
    viol_h: np.ndarray

    def max_violation(self) -> float:
        parts = [0.0]
        if self.viol_g.size:
            parts.append(float(np.max(self.viol_g)))
        if self.viol_h.size:
            parts.append(float(np.max(np.abs(self.viol_h))))
        return max(parts)


@dataclass
class DualState:
    """Multipliers plus the controller memory used by the PI dual update."""

    lam: np.ndarray
    mu: np.ndarray
    prev_error_g: np.ndarray
    prev_error_h: np.ndarray
    initialized: bool = False

    @classmethod
    def zeros(cls, m: int, n: int) -> "DualState":
        return cls(np.zeros(m), np.zeros(n), np.zeros(m), np.zeros(n), False)

    @classmethod
    def from_values(cls, lam, mu=None) -> "DualState":
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        mu = np.zeros(0) if mu is None else np.atleast_1d(np.asarray(mu, dtype=float))
        return cls(lam.copy(), mu.copy(), np.zeros_like(lam), np.zeros_like(mu), False)

    def copy(self) -> "DualState":
        return DualState(
            self.lam.copy(),
            self.mu.copy(),
            self.prev_error_g.copy(),
            self.prev_error_h.copy(),
            self.initialized,
        )


Evaluator = Callable[[np.ndarray], Evaluation]


@dataclass(frozen=True)
class ConstrainedProblem:
    """Immutable problem definition.

    The domain is a box ``[lower, upper]`` (entries may be infinite);
    ``project`` clips onto it, which is idempotent bit for bit.
    """

    name: str
    dim_primal: int
    num_ineq: int
    num_eq: int
    evaluator: Evaluator
    eps_g: np.ndarray
    eps_h: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    x0: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim_primal < 1 or self.num_ineq < 0 or self.num_eq < 0:
            raise ContractError("need d >= 1, m >= 0, n >= 0")
        if np.shape(self.eps_g) != (self.num_ineq,) or np.shape(self.eps_h) != (self.num_eq,):
            raise ContractError("constraint level shapes do not match m and n")
        for arr in (self.lower, self.upper, self.x0):
            if np.shape(arr) != (self.dim_primal,):
                raise ContractError("domain bounds and x0 must have length d")
        if np.any(self.lower > self.upper):
            raise ContractError("empty domain: lower > upper")

    @property
    def levels(self) -> tuple[np.ndarray, np.ndarray]:
        return self.eps_g, self.eps_h

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(x, self.lower), self.upper)

    def in_domain(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


def evaluate(problem: ConstrainedProblem, x) -> Evaluation:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dim_primal,):
        raise ContractError(f"x has shape {x.shape}, expected ({problem.dim_primal},)")
    ev = problem.evaluator(x)
    m, n, d = problem.num_ineq, problem.num_eq, problem.dim_primal
    if ev.g.shape != (m,) or ev.h.shape != (n,) or ev.grad_f.shape != (d,):
        raise ContractError("evaluator output shapes do not match the problem")
    if ev.jac_g.shape != (m, d) or ev.jac_h.shape != (n, d):
        raise ContractError("evaluator Jacobian shapes do not match the problem")
    return ev.check_finite()


def _check_dual_shapes(ev: Evaluation, dual: DualState) -> None:
    if dual.lam.shape != ev.g.shape or dual.mu.shape != ev.h.shape:
        raise ContractError(
            f"multiplier shapes {dual.lam.shape}/{dual.mu.shape} do not match "
            f"constraint shapes {ev.g.shape}/{ev.h.shape}"
        )


def violations(ev: Evaluation, levels) -> ViolationVector:
    eps_g, eps_h = levels
    if np.shape(eps_g) != ev.g.shape or np.shape(eps_h) != ev.h.shape:
        raise ContractError("constraint levels do not match evaluation shapes")
    return ViolationVector(ev.g - eps_g, ev.h - eps_h)


def feasible(ev: Evaluation, levels, tol: float = DEFAULT_FEAS_TOL) -> bool:
    if tol < 0:
        raise ContractError("feasibility tolerance must be nonnegative")
    return violations(ev, levels).max_violation() <= tol


def lagrangian_value(ev: Evaluation, dual: DualState, levels) -> float:
    _check_dual_shapes(ev, dual)
    v = violations(ev, levels)
    return float(ev.f + dual.lam @ v.viol_g + dual.mu @ v.viol_h)


def penalized_value(ev: Evaluation, c_g, c_h=None) -> float:
    """``f + c_g.g + c_h.h``; levels are deliberately not subtracted."""
    c_g = np.atleast_1d(np.asarray(c_g, dtype=float)) if ev.g.size else np.zeros(0)
    c_h = np.zeros(ev.h.size) if c_h is None else np.atleast_1d(np.asarray(c_h, dtype=float))
    if c_g.shape != ev.g.shape or c_h.shape != ev.h.shape:
        raise ContractError("penalty coefficient shapes do not match constraints")
    if np.any(c_g < 0):
        raise ContractError("inequality penalty coefficients must be nonnegative")
    return float(ev.f + c_g @ ev.g + c_h @ ev.h)


def lagrangian_grad_x(ev: Evaluation, dual: DualState) -> np.ndarray:
    _check_dual_shapes(ev, dual)
    grad = ev.grad_f
    if dual.lam.size:
        grad = grad + dual.lam @ ev.jac_g
    if dual.mu.size:
        grad = grad + dual.mu @ ev.jac_h
    return grad
