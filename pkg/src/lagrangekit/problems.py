"""Benchmark problems with analytic gradients and ground-truth solutions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

from .core import ConstrainedProblem, ContractError, Evaluation, GenerationError

HALF_PI = math.pi / 2

# ---------------------------------------------------------------------------
# Concave 2D problem: min (1+y^2) cos x  s.t. (1+y^2) sin x <= eps, x in [0, pi/2]


def concave2d_eval(x: float, y: float) -> Evaluation:
    if not 0.0 <= x <= HALF_PI:
        raise ContractError(f"x={x!r} outside the domain [0, pi/2]; project first")
    a = 1.0 + y * y
    cx, sx = math.cos(x), math.sin(x)
    return Evaluation(
        f=a * cx,
        g=np.array([a * sx]),
        h=np.zeros(0),
        grad_f=np.array([-a * sx, 2.0 * y * cx]),
        jac_g=np.array([[a * cx, 2.0 * y * sx]]),
        jac_h=np.zeros((0, 2)),
    )


def concave2d_problem(eps: float) -> ConstrainedProblem:
    if not 0.0 < eps < 1.0:
        raise ContractError("concave2d needs 0 < eps < 1")
    return ConstrainedProblem(
        name="concave2d",
        dim_primal=2,
        num_ineq=1,
        num_eq=0,
        evaluator=lambda v: concave2d_eval(v[0], v[1]),
        eps_g=np.array([float(eps)]),
        eps_h=np.zeros(0),
        lower=np.array([0.0, -np.inf]),
        upper=np.array([HALF_PI, np.inf]),
        # interior start, off-axis in y so the y-dynamics are exercised
        x0=np.array([math.pi / 4, 0.1]),
        metadata={"eps": float(eps)},
    )


def concave2d_solution(eps: float) -> tuple[float, float, float, float]:
    """Return ``(x*, y*, lambda*, f*)`` of the constrained minimizer."""
    if not 0.0 < eps < 1.0:
        raise ContractError("concave2d needs 0 < eps < 1")
    root = math.sqrt(1.0 - eps * eps)
    return math.asin(eps), 0.0, eps / root, root


# ---------------------------------------------------------------------------
# Convex sanity instance: min x^2  s.t. 1 - x <= 0


def convexquad_eval(x: float) -> Evaluation:
    return Evaluation(
        f=x * x,
        g=np.array([1.0 - x]),
        h=np.zeros(0),
        grad_f=np.array([2.0 * x]),
        jac_g=np.array([[-1.0]]),
        jac_h=np.zeros((0, 1)),
    )


def convexquad_problem() -> ConstrainedProblem:
    return ConstrainedProblem(
        name="convexquad",
        dim_primal=1,
        num_ineq=1,
        num_eq=0,
        evaluator=lambda v: convexquad_eval(v[0]),
        eps_g=np.zeros(1),
        eps_h=np.zeros(0),
        lower=np.array([-np.inf]),
        upper=np.array([np.inf]),
        x0=np.array([3.0]),
    )


CONVEXQUAD_SOLUTION = (1.0, 2.0)  # (x*, lambda*)

# ---------------------------------------------------------------------------
# Gaussian mixture data and the rate-constrained linear classifier


@dataclass(frozen=True)
class GaussianMixtureSpec:
    mean_separation: float = 1.0  # class means at (-s, 0) and (s, 0)
    std: float = 0.3
    n_per_class: int = 100
    seed: int = 0


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray  # int labels in {0, 1}

    def __len__(self) -> int:
        return len(self.y)


def is_linearly_separable(X: np.ndarray, y: np.ndarray) -> bool:
    """Hard-margin feasibility: exists (w, b) with s_i (w.x_i + b) >= 1."""
    s = np.where(y == 1, 1.0, -1.0)
    A = np.c_[X, np.ones(len(X))] * s[:, None]
    res = linprog(
        c=np.zeros(A.shape[1]),
        A_ub=-A,
        b_ub=-np.ones(len(X)),
        bounds=[(None, None)] * A.shape[1],
        method="highs",
    )
    return res.status == 0


def make_gaussian_mixture(spec: GaussianMixtureSpec = GaussianMixtureSpec(), max_attempts: int = 100) -> Dataset:
    if spec.n_per_class < 1:
        raise ContractError("n_per_class must be >= 1")
    if spec.std < 0:
        raise ContractError("std must be nonnegative")
    k = spec.n_per_class
    means = np.array([[-spec.mean_separation, 0.0], [spec.mean_separation, 0.0]])
    y = np.r_[np.zeros(k, dtype=int), np.ones(k, dtype=int)]
    for attempt in range(max_attempts):
        rng = np.random.default_rng([spec.seed, attempt])
        X = np.vstack([means[0] + spec.std * rng.standard_normal((k, 2)),
                       means[1] + spec.std * rng.standard_normal((k, 2))])
        if is_linearly_separable(X, y):
            return Dataset(X, y)
    raise GenerationError(f"no separable sample after {max_attempts} attempts for {spec}")


def save_dataset_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "label"])
        for (a, b), lab in zip(data.X, data.y):
            w.writerow([repr(float(a)), repr(float(b)), int(lab)])


def load_dataset_csv(path) -> Dataset:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"x1", "x2", "label"}:
        raise ContractError(f"{path}: expected columns x1, x2, label")
    X = np.array([[float(r["x1"]), float(r["x2"])] for r in rows])
    y = np.array([int(r["label"]) for r in rows])
    return Dataset(X, y)


@dataclass(frozen=True)
class RateEvaluation:
    """Objective plus both the true and the surrogate rate constraint."""

    f: float
    grad_f: np.ndarray
    true_rate: float
    surrogate_rate: float
    g_true: float
    g_surrogate: float
    grad_g_surrogate: np.ndarray
    accuracy: float


class RateProblem:
    """Linear classifier with a lower bound on the class-0 prediction rate.

    Parameters are ``theta = (w_1, w_2, b)``. Class 0 is predicted iff
    ``w.x + b <= 0``. The constraint is written ``rho - rate <= 0``.
    """

    def __init__(self, data: Dataset, target_rate: float = 0.7):
        if len(data) == 0:
            raise ContractError("rate problem needs a nonempty dataset")
        self.data = data
        self.target_rate = float(target_rate)
        self._A = np.c_[data.X, np.ones(len(data))]
        self._yf = data.y.astype(float)

    @property
    def dim(self) -> int:
        return self._A.shape[1]

    def logits(self, theta) -> np.ndarray:
        return self._A @ np.asarray(theta, dtype=float)

    def evaluate(self, theta) -> RateEvaluation:
        A, y = self._A, self._yf
        n = len(y)
        z = A @ np.asarray(theta, dtype=float)
        s = expit(z)
        ce = float(np.mean(np.logaddexp(0.0, z) - y * z))
        true_rate = float(np.mean(z <= 0.0))
        sur_rate = float(np.mean(1.0 - s))
        return RateEvaluation(
            f=ce,
            grad_f=(s - y) @ A / n,
            true_rate=true_rate,
            surrogate_rate=sur_rate,
            g_true=self.target_rate - true_rate,
            g_surrogate=self.target_rate - sur_rate,
            grad_g_surrogate=(s * (1.0 - s)) @ A / n,
            accuracy=float(np.mean((z > 0.0) == (self.data.y == 1))),
        )

    def _problem(self, surrogate: bool) -> ConstrainedProblem:
        d = self.dim

        def evaluator(theta):
            r = self.evaluate(theta)
            if surrogate:
                g, jac = r.g_surrogate, r.grad_g_surrogate[None, :]
            else:
                # piecewise constant: zero derivative almost everywhere
                g, jac = r.g_true, np.zeros((1, d))
            return Evaluation(r.f, np.array([g]), np.zeros(0), r.grad_f, jac, np.zeros((0, d)))

        return ConstrainedProblem(
            name="rate-surrogate" if surrogate else "rate",
            dim_primal=d,
            num_ineq=1,
            num_eq=0,
            evaluator=evaluator,
            eps_g=np.zeros(1),
            eps_h=np.zeros(0),
            lower=np.full(d, -np.inf),
            upper=np.full(d, np.inf),
            x0=np.zeros(d),
            metadata={"target_rate": self.target_rate},
        )

    def true_problem(self) -> ConstrainedProblem:
        return self._problem(surrogate=False)

    def surrogate_problem(self) -> ConstrainedProblem:
        return self._problem(surrogate=True)


def rate_eval(problem: RateProblem, w, b) -> RateEvaluation:
    return problem.evaluate(np.r_[np.asarray(w, dtype=float), float(b)])
