"""Command-line entry point: solve, sweep, bisect and certify.

Every command reads one JSON document (``--config``) whose top-level
``command`` field must match the subcommand. Flags override file values,
which override built-in defaults.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import ContractError, EvaluationError, GenerationError
from .diagnostics import certify
from .optimizers import DualOptConfig, PrimalOptConfig, SchemeConfig, fmt, run
from .problems import GaussianMixtureSpec, RateProblem, concave2d_problem, convexquad_problem, load_dataset_csv, \
    make_gaussian_mixture
from .tuner import run_bisection, table_stub_builder

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_EVAL = 0, 1, 2, 3

DEFAULTS = {
    "problem": {"id": "concave2d", "eps": 0.5},
    "scheme": {"kind": "lagrangian"},
    "primal": {"kind": "gd", "step_size": 0.01},
    "dual": {"kind": "nupi", "step_size": 0.3, "kappa_p": 40.0},
    "iterations": 10000,
    "seed": 0,
    "stride": 1,
}

TOP_KEYS = {
    "solve": {"command", "problem", "scheme", "primal", "dual", "iterations", "seed", "out", "stride", "x0"},
    "sweep": {"command", "problem", "scheme", "primal", "dual", "iterations", "seed", "out", "stride", "x0",
              "sweep", "jobs"},
    "bisect": {"command", "problem", "seed", "out", "bisect"},
    "certify": {"command", "problem", "candidate", "seed", "out", "second_order"},
}

PROBLEM_KEYS = {
    "concave2d": {"id", "eps"},
    "convexquad": {"id"},
    "rate": {"id", "target_rate", "mean_separation", "std", "n_per_class", "data_seed", "data_csv"},
    "sparsity": {"id", "samples", "epochs", "batch_size", "lr", "gate_lr", "density_target", "images", "labels"},
}
SCHEME_KEYS = {"kind", "penalty_c_g", "penalty_c_h", "alm_c", "surrogate_id"}
PRIMAL_KEYS = {"kind", "step_size", "adam_beta1", "adam_beta2", "adam_epsilon"}
DUAL_KEYS = {"kind", "step_size", "kappa_p", "nu"}
SWEEP_KEYS = {"axis", "values"}
SWEEP_AXES = ("dual_step_size", "primal_step_size", "penalty", "alm_c", "kappa_p", "eps")
BISECT_KEYS = {"lo", "hi", "target", "tol", "max_iters", "stub", "decreasing"}


class ConfigError(ContractError):
    """Invalid configuration; maps to exit status 2."""


def _check_keys(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a JSON object")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r} in {where}")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "problem":
            out[k] = {**out[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(command: str, path=None, overrides=None) -> dict:
    """Read, merge and key-check a config. Does not build any objects."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        if raw.get("command", command) != command:
            raise ConfigError(f"config command {raw.get('command')!r} does not match subcommand {command!r}")
    _check_keys(raw, TOP_KEYS[command], "config")
    cfg = _merge({k: v for k, v in DEFAULTS.items() if k in TOP_KEYS[command]}, raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    cfg["command"] = command
    if not isinstance(cfg["problem"], dict):
        raise ConfigError("problem must be a JSON object")
    _check_keys(cfg["problem"], PROBLEM_KEYS.get(cfg["problem"].get("id"), {"id"}), "problem")
    if cfg["problem"].get("id") not in PROBLEM_KEYS:
        raise ConfigError(f"unknown problem id {cfg['problem'].get('id')!r}")
    for name, keys in (("scheme", SCHEME_KEYS), ("primal", PRIMAL_KEYS), ("dual", DUAL_KEYS),
                       ("sweep", SWEEP_KEYS), ("bisect", BISECT_KEYS)):
        if name in cfg:
            _check_keys(cfg[name], keys, name)
    if "iterations" in cfg:
        it = cfg["iterations"]
        if not isinstance(it, int) or isinstance(it, bool) or it < 1:
            raise ConfigError(f"iterations must be a positive integer, got {it!r}")
    if "stride" in cfg and (not isinstance(cfg["stride"], int) or cfg["stride"] < 1):
        raise ConfigError("stride must be a positive integer")
    return cfg


# ---------------------------------------------------------------------------
# building runs


def _rate_problem(p: dict, seed: int) -> RateProblem:
    if "data_csv" in p:
        data = load_dataset_csv(p["data_csv"])
    else:
        spec = GaussianMixtureSpec(
            mean_separation=float(p.get("mean_separation", 1.0)),
            std=float(p.get("std", 0.3)),
            n_per_class=int(p.get("n_per_class", 100)),
            seed=int(p.get("data_seed", seed)),
        )
        data = make_gaussian_mixture(spec)
    return RateProblem(data, float(p.get("target_rate", 0.7)))


def _arr(v):
    return None if v is None else np.atleast_1d(np.asarray(v, dtype=float))


def _rate_summary(rp: RateProblem):
    def summary(x):
        r = rp.evaluate(x)
        return {"class0_rate": r.true_rate, "accuracy": r.accuracy, "g_true": r.g_true}

    return summary


def build_run(cfg: dict) -> dict:
    """Turn a checked config into problem, configs and a summary hook."""
    p = cfg["problem"]
    s = cfg["scheme"]
    try:
        scheme = SchemeConfig(s.get("kind", "lagrangian"), _arr(s.get("penalty_c_g")), _arr(s.get("penalty_c_h")),
                              s.get("alm_c"), s.get("surrogate_id"))
        primal = PrimalOptConfig(**cfg["primal"])
        dual = DualOptConfig(**cfg["dual"]) if scheme.kind != "penalized" else None
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    surrogate, extra = None, None
    if p["id"] == "concave2d":
        problem = concave2d_problem(float(p.get("eps", 0.5)))
    elif p["id"] == "convexquad":
        problem = convexquad_problem()
    elif p["id"] == "rate":
        rp = _rate_problem(p, cfg["seed"])
        if scheme.kind == "proxy":
            if scheme.surrogate_id != "sigmoid":
                raise ConfigError("rate problem supports surrogate_id 'sigmoid' only")
            problem, surrogate = rp.true_problem(), rp.surrogate_problem()
        else:
            # the true rate has zero gradient, so other schemes use the surrogate throughout
            problem = rp.surrogate_problem()
        extra = _rate_summary(rp)
    else:
        raise ConfigError(f"problem {p['id']!r} is not supported by {cfg['command']}")
    if scheme.kind == "proxy" and surrogate is None:
        raise ConfigError("proxy scheme is only available for the rate problem")
    if scheme.kind == "penalized" and scheme.penalty_c_g is None and problem.num_ineq:
        raise ConfigError("penalized scheme needs penalty_c_g")
    x0 = cfg.get("x0")
    if x0 is not None and np.shape(x0) != (problem.dim_primal,):
        raise ConfigError(f"x0 must have length {problem.dim_primal}")
    return {"problem": problem, "surrogate": surrogate, "scheme": scheme, "primal": primal, "dual": dual,
            "iters": cfg["iterations"], "seed": cfg["seed"], "stride": cfg["stride"], "x0": x0, "extra": extra}


def execute(built: dict):
    trace = run(built["problem"], built["scheme"], built["primal"], built["dual"], built["iters"], built["seed"],
                x0=built["x0"], surrogate=built["surrogate"], stride=built["stride"])
    summary = {
        "f": trace.f[-1],
        "x": trace.final_x,
        "g": trace.g[-1],
        "h": trace.h[-1],
        "lambda": trace.final_lam,
        "mu": trace.mu[-1],
        "feasible": trace.feasible[-1],
        "kkt_residual": trace.stationarity[-1],
    }
    if built["extra"] is not None:
        summary.update(built["extra"](trace.final_x))
    return trace, summary


def render(summary: dict) -> str:
    lines = []
    for k, v in summary.items():
        if isinstance(v, (bool, np.bool_)):
            v = str(bool(v)).lower()
        elif isinstance(v, np.ndarray):
            v = "[" + ", ".join(fmt(float(a)) for a in v) + "]"
        elif isinstance(v, float):
            v = fmt(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines)


def out_dir(cfg: dict) -> Path:
    path = Path(cfg.get("out") or os.environ.get("LAGRANGEKIT_OUT") or "lagrangekit_out")
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: dict) -> int:
    built = build_run(cfg)
    trace, summary = execute(built)
    out = out_dir(cfg)
    trace.write_csv(out / "trace.csv")
    print(render(summary))
    return EXIT_OK


def _with_axis_value(cfg: dict, axis: str, value: float) -> dict:
    c = copy.deepcopy(cfg)
    if axis == "dual_step_size":
        c["dual"]["step_size"] = value
    elif axis == "primal_step_size":
        c["primal"]["step_size"] = value
    elif axis == "kappa_p":
        c["dual"]["kappa_p"] = value
    elif axis == "alm_c":
        c["scheme"]["alm_c"] = value
    elif axis == "eps":
        c["problem"]["eps"] = value
    elif axis == "penalty":
        if c["problem"]["id"] != "sparsity":
            c["scheme"]["penalty_c_g"] = value
    return c


def _sparsity_data(p: dict, seed: int):
    from .smallnet import load_idx_dataset, synthetic_digits

    n = int(p.get("samples", 4000))
    if "images" in p or "labels" in p:
        if not ("images" in p and "labels" in p):
            raise ConfigError("sparsity problem needs both images and labels paths")
        X, y = load_idx_dataset(p["images"], p["labels"], limit=n)
        return X.reshape(len(X), -1) / 255.0, y
    return synthetic_digits(n, seed)


def sparsity_builder(p: dict, seed: int, data=None):
    """Map a penalty coefficient to (density %, accuracy %) by one training run."""
    from .smallnet import SparsityTrainConfig, train_sparsity

    X, y = data if data is not None else _sparsity_data(p, seed)
    base = SparsityTrainConfig(
        epochs=int(p.get("epochs", 20)),
        batch_size=int(p.get("batch_size", 256)),
        lr=float(p.get("lr", 1e-3)),
        gate_lr=float(p.get("gate_lr", 0.2)),
        seed=seed,
    )

    def builder(c: float):
        from dataclasses import replace

        res = train_sparsity(X, y, replace(base, coefficient=float(c)))
        return 100.0 * res.density, 100.0 * res.accuracy

    return builder


def _sweep_one(args):
    cfg, axis, value = args
    try:
        if cfg["problem"]["id"] == "sparsity":
            dens, acc = sparsity_builder(cfg["problem"], cfg["seed"])(value)
            target = 100.0 * float(cfg["problem"].get("density_target", 0.5))
            return value, dens, acc, dens <= target, "ok"
        built = build_run(_with_axis_value(cfg, axis, value))
        trace, summary = execute(built)
        if "class0_rate" in summary:
            feas = summary["g_true"] <= 0.0
            return value, 100.0 * summary["class0_rate"], 100.0 * summary["accuracy"], feas, "ok"
        return value, summary["f"], math.nan, bool(summary["feasible"]), "ok"
    except (ContractError, EvaluationError, GenerationError, ArithmeticError) as exc:
        return value, math.nan, math.nan, False, type(exc).__name__


SWEEP_METRIC = {"rate": "class0_rate", "sparsity": "density"}


def cmd_sweep(cfg: dict, jobs: int = 1) -> int:
    sw = cfg.get("sweep")
    if not sw or "axis" not in sw or not sw.get("values"):
        raise ConfigError("sweep needs an axis and a nonempty values list")
    axis = sw["axis"]
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    values = [float(v) for v in sw["values"]]
    if cfg["problem"]["id"] == "sparsity":
        if axis != "penalty":
            raise ConfigError("sparsity sweeps support the penalty axis only")
    else:
        for v in values:  # validate every entry before running any
            build_run(_with_axis_value(cfg, axis, v))
    tasks = [(cfg, axis, v) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    rows.sort(key=lambda r: r[0])
    metric = SWEEP_METRIC.get(cfg["problem"]["id"], "f")
    out = out_dir(cfg)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", metric, "accuracy", "feasible", "status"])
        for value, m, acc, feas, status in rows:
            w.writerow([fmt(value), fmt(m), fmt(acc), int(bool(feas)), status])
    print(f"value {metric} accuracy feasible status")
    for value, m, acc, feas, status in rows:
        print(f"{fmt(value)} {fmt(m)} {fmt(acc)} {str(bool(feas)).lower()} {status}")
    return EXIT_OK


def cmd_bisect(cfg: dict) -> int:
    b = cfg.get("bisect", {})
    if b.get("stub"):
        builder = table_stub_builder
    else:
        if cfg["problem"]["id"] != "sparsity":
            raise ConfigError("live bisection needs the sparsity problem (or --stub)")
        builder = sparsity_builder(cfg["problem"], cfg["seed"])
    result = run_bisection(builder, lo=float(b.get("lo", 1e-3)), hi=float(b.get("hi", 1.0)),
                           target=float(b.get("target", 50.0)), tol=float(b.get("tol", 2.0)),
                           max_iters=int(b.get("max_iters", 5)), decreasing=bool(b.get("decreasing", True)))
    out = out_dir(cfg)
    result.write_csv(out / "bisect_history.csv")
    for p in result.history:
        line = f"iteration={p.iteration} coefficient={fmt(p.coefficient)} metric={fmt(p.metric)} accuracy={fmt(p.accuracy)}"
        print(line + (f" error={p.error}" if p.error else ""))
    print(f"solves={result.solves} final_coefficient={fmt(result.final.coefficient)} final_metric={fmt(result.final.metric)}")
    for ca, cb in result.anomalies:
        print(f"anomaly: metric not monotone between {fmt(ca)} and {fmt(cb)}")
    return EXIT_OK


def read_candidate(path, problem) -> tuple:
    try:
        data = json.loads(Path(path).read_text())
        x = np.asarray(data["x"], dtype=float)
        lam = np.atleast_1d(np.asarray(data.get("lambda", np.zeros(problem.num_ineq)), dtype=float))
        mu = np.atleast_1d(np.asarray(data.get("mu", np.zeros(problem.num_eq)), dtype=float))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse candidate file {path}: {exc}") from exc
    if x.shape != (problem.dim_primal,) or lam.shape != (problem.num_ineq,) or mu.shape != (problem.num_eq,):
        raise ConfigError("candidate lengths do not match the problem")
    return x, lam, mu


def cmd_certify(cfg: dict) -> int:
    if "candidate" not in cfg:
        raise ConfigError("certify needs a candidate file")
    p = cfg["problem"]
    if p["id"] == "concave2d":
        problem = concave2d_problem(float(p.get("eps", 0.5)))
    elif p["id"] == "convexquad":
        problem = convexquad_problem()
    elif p["id"] == "rate":
        problem = _rate_problem(p, cfg["seed"]).surrogate_problem()
    else:
        raise ConfigError(f"problem {p['id']!r} cannot be certified")
    x, lam, mu = read_candidate(cfg["candidate"], problem)
    report = certify(problem, x, lam, mu, second_order=bool(cfg.get("second_order", True)))
    text = report.to_text()
    (out_dir(cfg) / "kkt_report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if report.passed else EXIT_FAIL


# ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lagrangekit", description="Constrained optimization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "sweep", "bisect", "certify"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (default: $LAGRANGEKIT_OUT)")
        if name in ("solve", "sweep"):
            sp.add_argument("--stride", type=int, help="record every K-th iterate")
        if name == "sweep":
            sp.add_argument("--jobs", type=int, default=1)
        if name == "bisect":
            sp.add_argument("--stub", action="store_true", help="replay the reference density sequence")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    overrides = {"seed": args.seed, "out": args.out}
    if getattr(args, "stride", None) is not None:
        overrides["stride"] = args.stride
    try:
        cfg = load_config(args.command, args.config, overrides)
        if getattr(args, "stub", False):
            cfg.setdefault("bisect", {})["stub"] = True
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "sweep":
            jobs = args.jobs if args.jobs != 1 else int(cfg.get("jobs", 1))
            if jobs < 1:
                raise ConfigError("jobs must be >= 1")
            return cmd_sweep(cfg, jobs)
        if args.command == "bisect":
            return cmd_bisect(cfg)
        return cmd_certify(cfg)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (EvaluationError, GenerationError) as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
