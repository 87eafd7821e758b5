"""Command-line front end: simulate, fit, cv, evaluate.

Exit codes: 0 success, 2 usage or data error, 3 I/O failure, 4 solver abort.
Any flag may also come from a JSON config file (--config); explicit flags
win.  All commands are deterministic given --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .extraction import fit_parallel, fit_sequential, sequential_cv_curve
from .families import ObservedOutcomes
from .io import (
    format_families,
    parse_families,
    read_json,
    read_matrix_csv,
    read_response_csv,
    write_json,
    write_matrix_csv,
    write_response_csv,
)
from .model import DesignMatrices, FitResult
from .reduced_rank import fit_reduced_rank
from .simbench import SimSpec, SimTruth, metrics, simulate
from .tuning import TuningConfig
from .unit_rank import SolverError

_SETUPS = {"I": (200, 100), "II": (200, 300)}
_SCENARIOS = {
    "gaussian": (30, 0, 0), "bernoulli": (0, 30, 0), "poisson": (0, 0, 30),
    "gb": (15, 15, 0), "gp": (15, 0, 15),
}
_METRIC_COLUMNS = ("ErC", "ErTheta", "FPR", "FNR", "Rpct", "rank", "time_s")


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="cofreg", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic benchmark replicate")
    sim.add_argument("--config", help="JSON file supplying any flag")
    sim.add_argument("--setup", choices=sorted(_SETUPS), help="dimension preset (I or II)")
    sim.add_argument("--family", choices=sorted(_SCENARIOS), help="response scenario")
    sim.add_argument("--n", type=int)
    sim.add_argument("--p", type=int)
    sim.add_argument("--q", help="family layout, e.g. 'g×15,b×15' (overrides --family)")
    sim.add_argument("--snr", type=float, default=0.5)
    sim.add_argument("--missing", type=float, default=0.0)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", default=".", help="output directory")

    fit = sub.add_parser("fit", help="fit a model to X.csv / Y.csv")
    fit.add_argument("--config", help="JSON file supplying any flag")
    fit.add_argument("--x", required=True, help="predictor CSV")
    fit.add_argument("--y", required=True, help="response CSV (NA = missing)")
    fit.add_argument("--z", help="control CSV (intercept column is added unless --no-intercept)")
    fit.add_argument("--families", required=True, help="e.g. 'gaussian×30' or 'g×15,b×15'")
    fit.add_argument("--method", choices=("gofar-s", "gofar-p", "ginit"), default="gofar-s")
    fit.add_argument("--rmax", type=int, default=3, help="max components (gofar-s)")
    fit.add_argument("--rank", type=int, default=3, help="target rank (gofar-p, ginit)")
    fit.add_argument("--lambda", dest="lam", type=float, help="fixed penalty (skips tuning)")
    fit.add_argument("--seed", type=int, help="required unless --lambda or ginit")
    fit.add_argument("--folds", type=int, default=5)
    fit.add_argument("--n-lambda", type=int, default=40)
    fit.add_argument("--lambda-min-ratio", type=float, default=1e-6)
    fit.add_argument("--no-one-sd", action="store_true", help="pick the CV minimiser")
    fit.add_argument("--alpha", type=float, default=0.95)
    fit.add_argument("--gamma", type=float, default=1.0)
    fit.add_argument("--epsilon", type=float, default=1e-6)
    fit.add_argument("--max-iter", type=int, default=500)
    fit.add_argument("--alpha-p", type=float, default=10.0)
    fit.add_argument("--threads", type=int, default=1)
    fit.add_argument("--no-intercept", action="store_true")
    fit.add_argument("--out", default="fit.json")

    cv = sub.add_parser("cv", help="emit the cross-validation curve of one extraction step")
    cv.add_argument("--config", help="JSON file supplying any flag")
    cv.add_argument("--x", required=True)
    cv.add_argument("--y", required=True)
    cv.add_argument("--z")
    cv.add_argument("--families", required=True)
    cv.add_argument("--component", type=int, default=1, help="extraction step (1-based)")
    cv.add_argument("--seed", type=int, required=True)
    cv.add_argument("--folds", type=int, default=5)
    cv.add_argument("--n-lambda", type=int, default=40)
    cv.add_argument("--lambda-min-ratio", type=float, default=1e-6)
    cv.add_argument("--no-one-sd", action="store_true")
    cv.add_argument("--alpha", type=float, default=0.95)
    cv.add_argument("--gamma", type=float, default=1.0)
    cv.add_argument("--epsilon", type=float, default=1e-6)
    cv.add_argument("--max-iter", type=int, default=500)
    cv.add_argument("--alpha-p", type=float, default=10.0)
    cv.add_argument("--threads", type=int, default=1)
    cv.add_argument("--no-intercept", action="store_true")
    cv.add_argument("--out", default="cv", help="basename for .csv and .json outputs")

    ev = sub.add_parser("evaluate", help="score fit.json against truth.json")
    ev.add_argument("--config", help="JSON file supplying any flag")
    ev.add_argument("--fit", help="fit JSON (single-replicate mode)")
    ev.add_argument("--truth", help="truth JSON (single-replicate mode)")
    ev.add_argument("--aggregate", help="directory of replicate subdirs with fit.json + truth.json")
    ev.add_argument("--out", default="metrics.csv")
    return top


def _apply_config(args: argparse.Namespace, argv: list[str]) -> argparse.Namespace:
    """Fill unset flags from the JSON config; explicit flags keep priority."""
    if not getattr(args, "config", None):
        return args
    data = read_json(args.config)
    explicit = {a.lstrip("-").replace("-", "_").split("=")[0] for a in argv if a.startswith("--")}
    for key, value in data.items():
        attr = key.replace("-", "_")
        if attr == "lambda":
            attr = "lam"
        if hasattr(args, attr) and attr not in explicit:
            setattr(args, attr, value)
    return args


def _sim_spec(args) -> SimSpec:
    if args.q:
        fams = parse_families(args.q)
        counts = {"gaussian": 0, "bernoulli": 0, "poisson": 0}
        for f in fams:
            counts[f.kind] += 1
    elif args.family:
        g, b, p = _SCENARIOS[args.family]
        counts = {"gaussian": g, "bernoulli": b, "poisson": p}
    else:
        raise ValueError("simulate needs --family or --q")
    if args.setup:
        n, p_dim = _SETUPS[args.setup]
    else:
        n, p_dim = args.n, args.p
    if args.n:
        n = args.n
    if args.p:
        p_dim = args.p
    if not n or not p_dim:
        raise ValueError("simulate needs --setup or both --n and --p")
    return SimSpec(
        n=n, p=p_dim,
        q_gaussian=counts["gaussian"], q_bernoulli=counts["bernoulli"],
        q_poisson=counts["poisson"],
        seed=args.seed, snr=args.snr, missing_fraction=args.missing,
    )


def _cmd_simulate(args) -> int:
    spec = _sim_spec(args)
    truth = simulate(spec)
    os.makedirs(args.out, exist_ok=True)
    write_matrix_csv(os.path.join(args.out, "X.csv"), truth.X)
    write_matrix_csv(os.path.join(args.out, "Z.csv"), truth.Z)
    write_response_csv(os.path.join(args.out, "Y.csv"), truth.y)
    write_json(os.path.join(args.out, "truth.json"), truth.to_dict())
    write_json(os.path.join(args.out, "spec.json"), spec.to_dict())
    return 0


def _load_problem(args):
    X = read_matrix_csv(args.x)
    y = read_response_csv(args.y)
    families = parse_families(args.families)
    if len(families) != y.q:
        raise ValueError(f"{len(families)} families declared for {y.q} response columns")
    y.validate(families)
    n = X.shape[0]
    if args.z:
        Z = read_matrix_csv(args.z)
        if not args.no_intercept:
            Z = np.column_stack([np.ones(n), Z])
    else:
        if args.no_intercept:
            raise ValueError("--no-intercept requires --z (the model needs controls)")
        Z = np.ones((n, 1))
    design = DesignMatrices(X, Z)
    return y, design, families


def _tuning(args) -> TuningConfig:
    if args.seed is None:
        raise ValueError("--seed is required when cross-validation runs")
    return TuningConfig(
        seed=args.seed, n_lambda=args.n_lambda,
        lambda_min_ratio=args.lambda_min_ratio, n_folds=args.folds,
        use_one_sd=not args.no_one_sd, threads=args.threads,
    )


def _cmd_fit(args) -> int:
    y, design, families = _load_problem(args)
    started = time.perf_counter()
    if args.method == "ginit":
        rr = fit_reduced_rank(y, design, families, r=args.rank, epsilon=args.epsilon,
                              max_iter=args.max_iter, alpha_p=args.alpha_p)
        result = FitResult.build(rr.components, rr.beta, rr.phi, design.p, y.q,
                                 {"method": "ginit", "iterations": rr.iterations,
                                  "converged": rr.converged})
    else:
        solver_opts = dict(lam=args.lam, alpha=args.alpha, gamma=args.gamma,
                           epsilon=args.epsilon, max_iter=args.max_iter,
                           alpha_p=args.alpha_p)
        tuning = _tuning(args) if args.lam is None else TuningConfig(
            seed=args.seed if args.seed is not None else 0,
            n_lambda=args.n_lambda, lambda_min_ratio=args.lambda_min_ratio,
            n_folds=args.folds, use_one_sd=not args.no_one_sd, threads=args.threads)
        if args.method == "gofar-s":
            result = fit_sequential(y, design, families, r_max=args.rmax,
                                    tuning=tuning, **solver_opts)
        else:
            result = fit_parallel(y, design, families, r=args.rank, tuning=tuning,
                                  threads=args.threads, **solver_opts)
    payload = result.to_dict()
    payload["families"] = format_families(families)
    payload["method"] = args.method
    payload["time_s"] = time.perf_counter() - started
    write_json(args.out, payload)
    return 0


def _cmd_cv(args) -> int:
    y, design, families = _load_problem(args)
    curve = sequential_cv_curve(
        y, design, families, component=args.component, tuning=_tuning(args),
        alpha=args.alpha, gamma=args.gamma, epsilon=args.epsilon,
        max_iter=args.max_iter, alpha_p=args.alpha_p,
    )
    with open(args.out + ".csv", "w") as fh:
        fh.write(curve.to_csv())
    write_json(args.out + ".json", curve.to_dict())
    return 0


def _metrics_row(fit_path, truth_path) -> dict:
    fit_data = read_json(fit_path)
    truth = SimTruth.from_dict(read_json(truth_path))
    fit = FitResult.from_dict(fit_data)
    row = metrics(fit, truth)
    row["time_s"] = float(fit_data.get("time_s", 0.0))
    return row


def _write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(_METRIC_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(row[c])) for c in _METRIC_COLUMNS) + "\n")


def _cmd_evaluate(args) -> int:
    if args.aggregate:
        rows = []
        for name in sorted(os.listdir(args.aggregate)):
            sub = os.path.join(args.aggregate, name)
            fit_path = os.path.join(sub, "fit.json")
            truth_path = os.path.join(sub, "truth.json")
            if os.path.isfile(fit_path) and os.path.isfile(truth_path):
                rows.append(_metrics_row(fit_path, truth_path))
        if not rows:
            raise ValueError(f"no replicate directories with fit.json and truth.json in {args.aggregate}")
        table = np.array([[row[c] for c in _METRIC_COLUMNS] for row in rows])
        mean = table.mean(axis=0)
        sd = table.std(axis=0, ddof=1) if len(rows) > 1 else np.zeros(len(_METRIC_COLUMNS))
        with open(args.out, "w") as fh:
            fh.write("stat," + ",".join(_METRIC_COLUMNS) + "\n")
            fh.write("mean," + ",".join(repr(float(v)) for v in mean) + "\n")
            fh.write("sd," + ",".join(repr(float(v)) for v in sd) + "\n")
        return 0
    if not args.fit or not args.truth:
        raise ValueError("evaluate needs --fit and --truth (or --aggregate)")
    _write_metrics_csv(args.out, [_metrics_row(args.fit, args.truth)])
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "cv": _cmd_cv,
    "evaluate": _cmd_evaluate,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    args = _apply_config(args, argv)
    try:
        return _COMMANDS[args.command](args)
    except SolverError as err:
        print(f"cofreg: solver error: {err}", file=sys.stderr)
        return 4
    except (ValueError, KeyError, json.JSONDecodeError) as err:
        print(f"cofreg: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"cofreg: i/o error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
