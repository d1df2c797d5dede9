"""Primal/dual update rules and the four solution schemes.

All schemes share one iteration shape: evaluate at ``x_t``, optionally update
the multipliers from the violations at ``x_t``, take one primal step with the
*new* multipliers, then project onto the domain.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import (
    DEFAULT_FEAS_TOL,
    ConstrainedProblem,
    ContractError,
    DualState,
    Evaluation,
    ViolationVector,
    evaluate,
    lagrangian_grad_x,
    lagrangian_value,
    violations,
)

PRIMAL_KINDS = ("gd", "adam")
DUAL_KINDS = ("ga", "nupi")
SCHEME_KINDS = ("penalized", "lagrangian", "augmented", "proxy")


@dataclass(frozen=True)
class PrimalOptConfig:
    kind: str = "gd"
    step_size: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in PRIMAL_KINDS:
            raise ContractError(f"primal optimizer kind must be one of {PRIMAL_KINDS}")
        if not self.step_size > 0:
            raise ContractError("primal step_size must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ContractError("Adam betas must lie in (0, 1)")
        if not self.adam_epsilon > 0:
            raise ContractError("adam_epsilon must be positive")


@dataclass(frozen=True)
class DualOptConfig:
    kind: str = "ga"
    step_size: float = 0.01
    kappa_p: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        if self.kind not in DUAL_KINDS:
            raise ContractError(f"dual optimizer kind must be one of {DUAL_KINDS}")
        if not self.step_size > 0:
            raise ContractError("dual step_size must be positive")
        if self.kappa_p < 0:
            raise ContractError("kappa_p must be nonnegative")
        if not 0 <= self.nu < 1:
            raise ContractError("nu must lie in [0, 1)")
        if self.nu != 0:
            raise ContractError("only the nu = 0 PI update is implemented")


@dataclass(frozen=True)
class SchemeConfig:
    kind: str
    penalty_c_g: Optional[np.ndarray] = None
    penalty_c_h: Optional[np.ndarray] = None
    alm_c: Optional[float] = None
    surrogate_id: Optional[str] = None

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ContractError(f"scheme kind must be one of {SCHEME_KINDS}")
        present = {
            "penalty_c_g": self.penalty_c_g is not None,
            "penalty_c_h": self.penalty_c_h is not None,
            "alm_c": self.alm_c is not None,
            "surrogate_id": self.surrogate_id is not None,
        }
        allowed = {
            "penalized": {"penalty_c_g", "penalty_c_h"},
            "lagrangian": set(),
            "augmented": {"alm_c"},
            "proxy": {"surrogate_id"},
        }[self.kind]
        extra = [k for k, v in present.items() if v and k not in allowed]
        if extra:
            raise ContractError(f"scheme {self.kind!r} does not take {extra}")
        if self.kind == "augmented":
            if self.alm_c is None or self.alm_c < 0:
                raise ContractError("augmented scheme needs alm_c >= 0")
        if self.kind == "proxy" and not self.surrogate_id:
            raise ContractError("proxy scheme needs a surrogate_id")
        if self.penalty_c_g is not None and np.any(np.asarray(self.penalty_c_g) < 0):
            raise ContractError("penalty_c_g must be nonnegative")


# ---------------------------------------------------------------------------
# primal steps


def gd_step(x: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    x, grad = np.asarray(x, dtype=float), np.asarray(grad, dtype=float)
    if x.shape != grad.shape:
        raise ContractError("x and grad shapes differ")
    return x - eta * grad


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(state: AdamState, grad: np.ndarray, cfg: PrimalOptConfig) -> tuple[AdamState, np.ndarray]:
    """Bias-corrected Adam. Returns the new moments and the displacement."""
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    step = -cfg.step_size * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
    return AdamState(m, v, t), step


# ---------------------------------------------------------------------------
# dual steps


def dual_ga_step(dual: DualState, viol: ViolationVector, eta_dual: float) -> DualState:
    if not eta_dual > 0:
        raise ContractError("dual step size must be positive")
    return DualState(
        lam=np.maximum(0.0, dual.lam + eta_dual * viol.viol_g),
        mu=dual.mu + eta_dual * viol.viol_h,
        prev_error_g=viol.viol_g,
        prev_error_h=viol.viol_h,
        initialized=True,
    )


def dual_nupi_step(dual: DualState, viol: ViolationVector, cfg: DualOptConfig) -> DualState:
    """PI update: ``lam <- [lam + eta (e_t + kappa_p (e_t - e_{t-1}))]_+``.

    On the first call the stored error is taken equal to ``e_t`` so the
    proportional term vanishes. Projection is applied last.
    """
    if cfg.kind != "nupi":
        raise ContractError("dual_nupi_step needs a nupi config")
    e_g, e_h = viol.viol_g, viol.viol_h
    prev_g = dual.prev_error_g if dual.initialized else e_g
    prev_h = dual.prev_error_h if dual.initialized else e_h
    eta, kp = cfg.step_size, cfg.kappa_p
    return DualState(
        lam=np.maximum(0.0, dual.lam + eta * (e_g + kp * (e_g - prev_g))),
        mu=dual.mu + eta * (e_h + kp * (e_h - prev_h)),
        prev_error_g=e_g,
        prev_error_h=e_h,
        initialized=True,
    )


def dual_step(dual: DualState, viol: ViolationVector, cfg: DualOptConfig) -> DualState:
    if cfg.kind == "nupi":
        return dual_nupi_step(dual, viol, cfg)
    return dual_ga_step(dual, viol, cfg.step_size)


# ---------------------------------------------------------------------------
# iterations


@dataclass(frozen=True)
class RunState:
    x: np.ndarray
    dual: DualState
    adam: Optional[AdamState] = None
    t: int = 0
    # evaluation at the x this state was produced from (None before step 1)
    last_eval: Optional[Evaluation] = None
    last_grad_eval: Optional[Evaluation] = None

    @classmethod
    def initial(cls, problem: ConstrainedProblem, x0=None, primal_cfg: Optional[PrimalOptConfig] = None) -> "RunState":
        x = problem.project(np.array(problem.x0 if x0 is None else x0, dtype=float))
        if x.shape != (problem.dim_primal,):
            raise ContractError("initial point has the wrong length")
        adam = AdamState.zeros(x.shape) if primal_cfg is not None and primal_cfg.kind == "adam" else None
        return cls(x, DualState.zeros(problem.num_ineq, problem.num_eq), adam)


def _primal_move(state: RunState, grad: np.ndarray, cfg: PrimalOptConfig) -> tuple[np.ndarray, Optional[AdamState]]:
    if cfg.kind == "gd":
        return gd_step(state.x, grad, cfg.step_size), state.adam
    adam = state.adam if state.adam is not None else AdamState.zeros(state.x.shape)
    adam, step = adam_step(adam, grad, cfg)
    return state.x + step, adam


def _finish(problem, state, grad, primal_cfg, dual, ev, grad_ev) -> RunState:
    x_new, adam = _primal_move(state, grad, primal_cfg)
    return RunState(problem.project(x_new), dual, adam, state.t + 1, ev, grad_ev)


def gda_iteration(problem: ConstrainedProblem, state: RunState, primal_cfg: PrimalOptConfig,
                  dual_cfg: DualOptConfig) -> RunState:
    """Alternating GDA: duals from ``x_t`` first, then a primal step using them."""
    ev = evaluate(problem, state.x)
    dual = dual_step(state.dual, violations(ev, problem.levels), dual_cfg)
    return _finish(problem, state, lagrangian_grad_x(ev, dual), primal_cfg, dual, ev, ev)


def _coefficients(problem: ConstrainedProblem, c_g, c_h) -> tuple[np.ndarray, np.ndarray]:
    c_g = np.zeros(problem.num_ineq) if c_g is None else np.broadcast_to(
        np.asarray(c_g, dtype=float), (problem.num_ineq,))
    c_h = np.zeros(problem.num_eq) if c_h is None else np.broadcast_to(
        np.asarray(c_h, dtype=float), (problem.num_eq,))
    if np.any(c_g < 0):
        raise ContractError("penalty coefficients on inequalities must be nonnegative")
    return c_g, c_h


def penalized_iteration(problem: ConstrainedProblem, state: RunState, primal_cfg: PrimalOptConfig,
                        c_g, c_h=None) -> RunState:
    c_g, c_h = _coefficients(problem, c_g, c_h)
    ev = evaluate(problem, state.x)
    grad = ev.grad_f + c_g @ ev.jac_g + c_h @ ev.jac_h
    return _finish(problem, state, grad, primal_cfg, state.dual, ev, ev)


def augmented_lagrangian_value(ev: Evaluation, dual: DualState, levels, c: float) -> float:
    v = violations(ev, levels)
    pen = np.sum(np.maximum(v.viol_g, 0.0) ** 2) + np.sum(v.viol_h**2)
    return lagrangian_value(ev, dual, levels) + 0.5 * c * float(pen)


def augmented_grad_x(ev: Evaluation, dual: DualState, levels, c: float) -> np.ndarray:
    grad = lagrangian_grad_x(ev, dual)
    if c == 0:
        return grad
    v = violations(ev, levels)
    return grad + c * (np.maximum(v.viol_g, 0.0) @ ev.jac_g) + c * (v.viol_h @ ev.jac_h)


def alm_iteration(problem: ConstrainedProblem, state: RunState, primal_cfg: PrimalOptConfig,
                  dual_cfg: DualOptConfig, alm_c: float) -> RunState:
    if alm_c < 0:
        raise ContractError("alm_c must be nonnegative")
    ev = evaluate(problem, state.x)
    dual = dual_step(state.dual, violations(ev, problem.levels), dual_cfg)
    grad = augmented_grad_x(ev, dual, problem.levels, alm_c)
    return _finish(problem, state, grad, primal_cfg, dual, ev, ev)


def _check_surrogate(problem: ConstrainedProblem, surrogate: ConstrainedProblem) -> None:
    if (surrogate.num_ineq, surrogate.num_eq, surrogate.dim_primal) != (
            problem.num_ineq, problem.num_eq, problem.dim_primal):
        raise ContractError("surrogate constraint blocks do not match the true problem")
    if not (np.array_equal(surrogate.eps_g, problem.eps_g) and np.array_equal(surrogate.eps_h, problem.eps_h)):
        raise ContractError("surrogate constraint levels differ from the true problem")


def proxy_gda_iteration(problem: ConstrainedProblem, surrogate: ConstrainedProblem, state: RunState,
                        primal_cfg: PrimalOptConfig, dual_cfg: DualOptConfig) -> RunState:
    """Duals follow the true constraints; the primal step uses surrogate Jacobians."""
    _check_surrogate(problem, surrogate)
    ev = evaluate(problem, state.x)
    ev_sur = ev if surrogate is problem else evaluate(surrogate, state.x)
    dual = dual_step(state.dual, violations(ev, problem.levels), dual_cfg)
    return _finish(problem, state, lagrangian_grad_x(ev_sur, dual), primal_cfg, dual, ev, ev_sur)


# ---------------------------------------------------------------------------
# driver and trace


def projected_gradient(problem: ConstrainedProblem, x: np.ndarray, grad: np.ndarray,
                       tol: float = 1e-6) -> np.ndarray:
    """Zero gradient components whose descent direction leaves an active bound."""
    out = np.array(grad, dtype=float)
    # distance to the bound each component would push through
    blocked = np.where(out > 0, x - problem.lower, problem.upper - x) <= tol
    if blocked.any():
        out[blocked] = 0.0
    return out


@dataclass
class Trace:
    """Recorded iterates. Stationarity and feasibility are derived in bulk on first access."""

    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    f: list = field(default_factory=list)
    g: list = field(default_factory=list)
    h: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    final_state: Optional[RunState] = None
    feas_tol: float = DEFAULT_FEAS_TOL
    _grads: list = field(default_factory=list, repr=False)  # (grad_f, jac_g, jac_h) used for stationarity
    _problem: Optional[ConstrainedProblem] = field(default=None, repr=False)
    _derived: Optional[tuple] = field(default=None, repr=False)

    def record(self, problem, t, x, ev, grad_ev, dual) -> None:
        self._problem = problem
        self.t.append(t)
        self.x.append(x)
        self.f.append(ev.f)
        self.g.append(ev.g)
        self.h.append(ev.h)
        self.lam.append(dual.lam)
        self.mu.append(dual.mu)
        self._grads.append((grad_ev.grad_f, grad_ev.jac_g, grad_ev.jac_h))
        self._derived = None

    def _derive(self) -> tuple:
        if self._derived is not None:
            return self._derived
        p = self._problem
        X = np.array(self.x)
        grad = np.array([gf for gf, _, _ in self._grads])
        if p.num_ineq:
            grad = grad + np.einsum("nm,nmd->nd", np.array(self.lam), np.array([jg for _, jg, _ in self._grads]))
        if p.num_eq:
            grad = grad + np.einsum("nk,nkd->nd", np.array(self.mu), np.array([jh for _, _, jh in self._grads]))
        blocked = np.where(grad > 0, X - p.lower, p.upper - X) <= 1e-6
        grad[blocked] = 0.0
        stat = np.abs(grad).max(axis=1, initial=0.0)
        G = np.array(self.g).reshape(len(self), p.num_ineq)
        H = np.array(self.h).reshape(len(self), p.num_eq)
        feas = (G - p.eps_g <= self.feas_tol).all(axis=1) & (np.abs(H - p.eps_h) <= self.feas_tol).all(axis=1)
        self._derived = ([float(v) for v in stat], [bool(v) for v in feas])
        return self._derived

    @property
    def stationarity(self) -> list:
        return self._derive()[0] if self.t else []

    @property
    def feasible(self) -> list:
        return self._derive()[1] if self.t else []

    def __len__(self) -> int:
        return len(self.t)

    def coordinate(self, index: int) -> np.ndarray:
        return np.array([x[index] for x in self.x])

    @property
    def final_x(self) -> np.ndarray:
        return self.x[-1]

    @property
    def final_lam(self) -> np.ndarray:
        return self.lam[-1]

    def columns(self) -> list[str]:
        d, m, n = len(self.x[0]), len(self.g[0]), len(self.h[0])
        return (["iter"] + [f"x_{i}" for i in range(d)] + ["f"] + [f"g_{i}" for i in range(m)]
                + [f"h_{i}" for i in range(n)] + [f"lambda_{i}" for i in range(m)]
                + [f"mu_{i}" for i in range(n)] + ["stationarity", "feasible"])

    def rows(self):
        stat, feas = self.stationarity, self.feasible
        for i in range(len(self)):
            yield ([self.t[i], *self.x[i], self.f[i], *self.g[i], *self.h[i], *self.lam[i],
                    *self.mu[i], stat[i], int(feas[i])])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([fmt(v) if isinstance(v, float) else v for v in row])


def fmt(value: float) -> str:
    return f"{value:.6g}"


def iterate(problem: ConstrainedProblem, scheme: SchemeConfig, state: RunState, primal_cfg: PrimalOptConfig,
            dual_cfg: Optional[DualOptConfig], surrogate: Optional[ConstrainedProblem] = None) -> RunState:
    if scheme.kind == "penalized":
        return penalized_iteration(problem, state, primal_cfg, scheme.penalty_c_g, scheme.penalty_c_h)
    if dual_cfg is None:
        raise ContractError(f"scheme {scheme.kind!r} needs a dual optimizer config")
    if scheme.kind == "lagrangian":
        return gda_iteration(problem, state, primal_cfg, dual_cfg)
    if scheme.kind == "augmented":
        return alm_iteration(problem, state, primal_cfg, dual_cfg, scheme.alm_c)
    if surrogate is None:
        raise ContractError("proxy scheme needs a surrogate problem")
    return proxy_gda_iteration(problem, surrogate, state, primal_cfg, dual_cfg)


def run(problem: ConstrainedProblem, scheme: SchemeConfig, primal_cfg: PrimalOptConfig,
        dual_cfg: Optional[DualOptConfig], iters: int, seed: int = 0, *, x0=None,
        surrogate: Optional[ConstrainedProblem] = None, stride: int = 1) -> Trace:
    """Run ``iters`` iterations of a scheme and return the trace.

    Records every ``stride``-th iterate plus the final one. Every bundled
    problem is deterministic, so ``seed`` is bookkeeping only.
    """
    if iters < 1:
        raise ContractError("iters must be >= 1")
    if stride < 1:
        raise ContractError("stride must be >= 1")
    if scheme.kind == "proxy" and surrogate is not None:
        _check_surrogate(problem, surrogate)
    start = time.perf_counter()
    trace = Trace(metadata={"seed": seed, "scheme": scheme.kind, "primal": primal_cfg,
                            "dual": dual_cfg, "iters": iters, "problem": problem.name})
    state = RunState.initial(problem, x0, primal_cfg)
    for _ in range(iters):
        prev = state
        state = iterate(problem, scheme, state, primal_cfg, dual_cfg, surrogate)
        if prev.t % stride == 0:
            trace.record(problem, prev.t, prev.x, state.last_eval, state.last_grad_eval, prev.dual)
    ev = evaluate(problem, state.x)
    grad_ev = ev if surrogate is None or scheme.kind != "proxy" else evaluate(surrogate, state.x)
    trace.record(problem, state.t, state.x, ev, grad_ev, state.dual)
    trace.final_state = replace(state, last_eval=ev, last_grad_eval=grad_ev)
    trace.metadata["wall_time"] = time.perf_counter() - start
    return trace
