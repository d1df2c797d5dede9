"""Constrained optimization toolkit: penalized, Lagrangian, augmented Lagrangian and proxy schemes."""

from .core import (
    ConstrainedProblem,
    ContractError,
    DualState,
    Evaluation,
    EvaluationError,
    GenerationError,
    ViolationVector,
    evaluate,
    feasible,
    lagrangian_grad_x,
    lagrangian_value,
    penalized_value,
    violations,
)
from .diagnostics import KktReport, certify, detect_oscillation, kkt_first_order, kkt_second_order
from .optimizers import DualOptConfig, PrimalOptConfig, SchemeConfig, Trace, run
from .problems import (
    RateProblem,
    concave2d_problem,
    concave2d_solution,
    convexquad_problem,
    make_gaussian_mixture,
)
from .tuner import BisectionState, bisect_step, log_midpoint, run_bisection

__version__ = "0.1.0"

__all__ = [
    "ConstrainedProblem",
    "ContractError",
    "DualState",
    "Evaluation",
    "EvaluationError",
    "GenerationError",
    "ViolationVector",
    "evaluate",
    "feasible",
    "lagrangian_grad_x",
    "lagrangian_value",
    "penalized_value",
    "violations",
    "KktReport",
    "certify",
    "detect_oscillation",
    "kkt_first_order",
    "kkt_second_order",
    "DualOptConfig",
    "PrimalOptConfig",
    "SchemeConfig",
    "Trace",
    "run",
    "RateProblem",
    "concave2d_problem",
    "concave2d_solution",
    "convexquad_problem",
    "make_gaussian_mixture",
    "BisectionState",
    "bisect_step",
    "log_midpoint",
    "run_bisection",
]
