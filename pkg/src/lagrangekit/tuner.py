"""Log-scale bisection over a scalar penalty coefficient."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .core import ContractError
from .optimizers import fmt

HISTORY_COLUMNS = ["iteration", "coefficient", "metric", "accuracy", "wall_time"]

# reference sparsity search: coefficient -> (density %, accuracy %)
SPARSITY_TABLE = {
    1.00e-3: (84.5, 99.97),
    1.0: (25.3, 99.97),
    3.16e-2: (68.1, 99.96),
    1.78e-1: (54.2, 100.00),
    4.22e-1: (39.0, 100.00),
    2.74e-1: (46.9, 99.99),
    2.21e-1: (50.5, 99.99),
}


def round_sig(x: float, sig: int = 3) -> float:
    if x == 0:
        return 0.0
    return round(x, sig - 1 - int(math.floor(math.log10(abs(x)))))


def log_midpoint(lo: float, hi: float) -> float:
    if not 0 < lo < hi:
        raise ContractError(f"bracket must satisfy 0 < lo < hi, got ({lo}, {hi})")
    return math.sqrt(lo * hi)


@dataclass(frozen=True)
class Probe:
    iteration: int
    coefficient: float
    metric: float
    accuracy: float = math.nan
    wall_time: float = 0.0
    error: Optional[str] = None


@dataclass(frozen=True)
class BisectionState:
    lo: float
    hi: float
    target: float
    tol: float
    max_iters: int
    decreasing: bool = True  # metric decreases as the coefficient grows
    history: tuple = field(default_factory=tuple)
    steps: int = 0
    done: bool = False

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ContractError("bracket must satisfy 0 < lo < hi")
        if self.tol <= 0:
            raise ContractError("tol must be positive")
        if self.max_iters < 0:
            raise ContractError("max_iters must be >= 0")

    @property
    def next_probe(self) -> float:
        return log_midpoint(self.lo, self.hi)


def bisect_step(state: BisectionState, observed_metric: float, *, accuracy: float = math.nan,
                wall_time: float = 0.0) -> BisectionState:
    """Record the metric observed at ``state.next_probe`` and shrink the bracket."""
    if state.done:
        return state
    c = state.next_probe
    steps = state.steps + 1
    history = state.history + (Probe(steps, c, observed_metric, accuracy, wall_time),)
    too_high = observed_metric > state.target
    need_larger = too_high if state.decreasing else not too_high
    lo, hi = (c, state.hi) if need_larger else (state.lo, c)
    done = abs(observed_metric - state.target) <= state.tol or steps >= state.max_iters
    return replace(state, lo=lo, hi=hi, history=history, steps=steps, done=done)


@dataclass
class BisectionResult:
    history: list
    solves: int
    final: Probe
    state: BisectionState
    anomalies: list = field(default_factory=list)  # (c_a, c_b) pairs breaking monotonicity

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for p in self.history:
                w.writerow([p.iteration, fmt(p.coefficient), fmt(p.metric), fmt(p.accuracy), fmt(p.wall_time)])


# A builder maps a coefficient to (metric, accuracy).
Builder = Callable[[float], tuple]


def _solve(builder: Builder, c: float) -> tuple[float, float, float, Optional[str]]:
    start = time.perf_counter()
    try:
        metric, acc = builder(c)
        err = None
    except Exception as exc:  # recorded per probe, the search continues
        metric, acc, err = math.nan, math.nan, f"{type(exc).__name__}: {exc}"
    return float(metric), float(acc), time.perf_counter() - start, err


def find_anomalies(history, decreasing: bool = True) -> list[tuple[float, float]]:
    """Pairs of probes whose metrics contradict the assumed monotone direction."""
    pts = sorted((p.coefficient, p.metric) for p in history if not math.isnan(p.metric))
    out = []
    for i, (ca, ma) in enumerate(pts):
        for cb, mb in pts[i + 1:]:
            if (mb > ma) if decreasing else (mb < ma):
                out.append((ca, cb))
    return out


def run_bisection(builder: Builder, lo: float = 1e-3, hi: float = 1.0, target: float = 50.0,
                  tol: float = 2.0, max_iters: int = 5, decreasing: bool = True) -> BisectionResult:
    """Evaluate both endpoints (iteration 0), then bisect in log space."""
    state = BisectionState(lo, hi, target, tol, max_iters, decreasing)
    history = []
    for c in (lo, hi):
        metric, acc, wt, err = _solve(builder, c)
        history.append(Probe(0, c, metric, acc, wt, err))
    best = min(history, key=lambda p: abs(p.metric - target) if not math.isnan(p.metric) else math.inf)
    if abs(best.metric - target) <= tol or max_iters == 0:
        return BisectionResult(history, 2, best, replace(state, done=True),
                               find_anomalies(history, decreasing))
    while not state.done:
        c = state.next_probe
        metric, acc, wt, err = _solve(builder, c)
        state = bisect_step(state, metric, accuracy=acc, wall_time=wt)
        probe = state.history[-1]
        if err is not None:
            probe = replace(probe, error=err)
        history.append(probe)
    return BisectionResult(history, len(history), history[-1], state, find_anomalies(history, decreasing))


def table_stub_builder(c: float) -> tuple[float, float]:
    """Replay the reference sparsity search: look up the coefficient to 3 sig. figs."""
    key = round_sig(c, 3)
    for coef, row in SPARSITY_TABLE.items():
        if math.isclose(round_sig(coef, 3), key):
            return row
    raise KeyError(f"coefficient {c:.6g} is not in the replay table")
