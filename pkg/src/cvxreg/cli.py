"""Command-line entry point: ``cvxreg {gen,fit,predict,smooth,cv,diagnose}``.

Exit codes: 0 success, 1 input or configuration error, 2 the solver stopped
before reaching tolerance (outputs are still written), 3 numerical fault.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .admm import AlmSchedule, SolverConfig
from .data import Dataset, StandardizationInfo, read_csv, read_matrix_csv, standardize, write_csv
from .errors import ConfigurationError, CvxRegError, InputError
from .model import (OUTSIDE_HULL, Variant, compute_kkt_report, constraint_values, dumps_json,
                    load_model_json, model_from_dict, model_to_dict, predict)
from .selection import cross_validate_L
from .smoothing import bias_correct, make_smooth
from .synthetic import EXAMPLES, generate
from .variants import fit_variant, parse_signs

log = logging.getLogger("cvxreg")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which we reserve for non-convergence
    def error(self, message):
        raise ConfigurationError(f"{self.prog}: {message}")


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _grid(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be comma-separated numbers, got {text!r}") from None


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--variant", choices=("convex", "concave"), default="convex")
    g.add_argument("--lipschitz", type=_float, default=None, metavar="L")
    g.add_argument("--monotone", default=None, metavar="SIGNS", help='per-coordinate signs, e.g. "+,-,0"')
    g.add_argument("--rho", type=_float, default=None, help="penalty parameter (default 1/n)")
    g.add_argument("--max-iters", type=int, default=20000)
    g.add_argument("--tol-primal", type=_float, default=1e-4)
    g.add_argument("--tol-grad", type=_float, default=1e-4)
    g.add_argument("--algorithm", choices=("admm", "alm"), default="admm")
    g.add_argument("--log-features", action="store_true", help="replace every covariate by its logarithm")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cvxreg", description="Convex regression by ADMM with smoothing and CV tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--json-errors", action="store_true", help="report errors as JSON on stderr")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("--example", choices=EXAMPLES, default="quad")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--snr", type=_float, default=math.inf)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)

    p = sub.add_parser("fit", help="fit a model to a CSV dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="model JSON path")
    p.add_argument("--trace", default=None, help="convergence trace CSV (default: <output>.trace.csv)")
    p.add_argument("--save-state", default=None, help="write final solver state (npz) for diagnose")
    _add_solver_flags(p)

    p = sub.add_parser("predict", help="evaluate a fitted model at query points")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="CSV with columns x1..xd (a trailing y column is ignored)")
    p.add_argument("--output", default=None, help="defaults to stdout")
    p.add_argument("--method", choices=("max", "canonical"), default="max")

    p = sub.add_parser("smooth", help="attach a smooth surrogate to a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--output", default=None, help="defaults to overwriting --model")
    p.add_argument("--prox", choices=("sq", "entropy"), default="entropy")
    ex = p.add_mutually_exclusive_group(required=True)
    ex.add_argument("--epsilon", type=_float)
    ex.add_argument("--tau", type=_float)
    p.add_argument("--bias-correct", action="store_true")

    p = sub.add_parser("cv", help="choose the Lipschitz bound by cross-validation")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="CV table CSV")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--grid", type=_grid, default=None, help="comma-separated L values; 'inf' allowed")
    p.add_argument("--seed", type=int, default=0)
    _add_solver_flags(p)

    p = sub.add_parser("diagnose", help="recompute the KKT residuals of a model on its data")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--state", default=None, help="solver state written by fit --save-state")
    p.add_argument("--output", default=None, help="defaults to stdout")
    return parser


# ------------------------------------------------------------------ helpers

def _solver_config(args, d: int) -> SolverConfig:
    signs = parse_signs(args.monotone, d) if args.monotone else None
    variant = Variant(lipschitz=args.lipschitz, signs=signs, concave=args.variant == "concave")
    return SolverConfig(rho=args.rho, max_iters=args.max_iters, tol_primal=args.tol_primal,
                        tol_grad=args.tol_grad, algorithm=args.algorithm, alm=AlmSchedule(), variant=variant)


def _log_features(X: np.ndarray) -> np.ndarray:
    if np.any(X <= 0):
        raise InputError("--log-features needs strictly positive covariates")
    return np.log(X)


def _prepare(args) -> tuple[Dataset, StandardizationInfo]:
    data = read_csv(args.input)
    if args.log_features:
        data = Dataset(_log_features(data.X), data.Y)
    return standardize(data)


def _write_text(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _model_inputs(obj: dict, X: np.ndarray) -> np.ndarray:
    if obj.get("fit_meta", {}).get("log_features"):
        X = _log_features(X)
    return X


# --------------------------------------------------------------- subcommands

def cmd_gen(args) -> int:
    data, _ = generate(args.example, args.n, args.d, args.snr, seed=args.seed)
    write_csv(data, args.output)
    return EXIT_OK


def cmd_fit(args) -> int:
    sdata, info = _prepare(args)
    config = _solver_config(args, sdata.d)
    model, trace, state = fit_variant(sdata, config, return_state=True)
    model.fit_meta["log_features"] = bool(args.log_features)
    model = replace(model, standardization=info)
    Path(args.output).write_text(dumps_json(model_to_dict(model)) + "\n", encoding="utf-8")
    trace.to_csv(args.trace or f"{args.output}.trace.csv")
    if args.save_state:
        # for concave fits the state belongs to the -Y problem
        np.savez(args.save_state, theta=state.theta, xi=state.xi, eta=state.eta, nu=state.nu,
                 rho=model.fit_meta["rho"], sign=model.sign)
    if not model.converged:
        log.warning("fit did not reach tolerance; model written with converged=false")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_predict(args) -> int:
    obj = load_model_json(args.model)
    model = model_from_dict(obj)
    X = _model_inputs(obj, read_matrix_csv(args.input))
    if X.shape[1] != model.d:
        raise InputError(f"query file has {X.shape[1]} covariates, model expects {model.d}")
    vals = predict(model, X, method=args.method)
    lines = ["y"] + ["outside_hull" if v is OUTSIDE_HULL else "%.17g" % float(v) for v in vals]
    _write_text("\n".join(lines) + "\n", args.output)
    return EXIT_OK


def cmd_smooth(args) -> int:
    obj = load_model_json(args.model)
    model = model_from_dict(obj)
    sm, cert = make_smooth(model, args.prox, epsilon=args.epsilon, tau=args.tau)
    if args.bias_correct:
        sm = bias_correct(sm, model)
    obj["smooth"] = sm.to_dict(cert)
    out = args.output or args.model
    Path(out).write_text(dumps_json(obj) + "\n", encoding="utf-8")
    sys.stdout.write(dumps_json(cert.to_dict()) + "\n")
    return EXIT_OK


def cmd_cv(args) -> int:
    sdata, _ = _prepare(args)
    config = _solver_config(args, sdata.d)
    grid = sorted(args.grid) if args.grid is not None else None
    res = cross_validate_L(sdata, grid=grid, k=args.folds, seed=args.seed, config=config)
    res.to_csv(args.output)
    sys.stdout.write(f"chosen L = {res.chosen:.17g}\n")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    obj = load_model_json(args.model)
    model = model_from_dict(obj)
    data = read_csv(args.input)
    X = _model_inputs(obj, data.X)
    info = model.standardization
    if info is not None:
        data = Dataset(info.transform_x(X), info.transform_y(data.Y))
    else:
        data = Dataset(X, data.Y)
    if data.n != model.n or not np.allclose(data.X, model.anchors, rtol=0, atol=1e-9):
        raise InputError("data file does not match the model's anchors")
    s = model.sign
    if args.state:
        z = np.load(args.state)
        st = SimpleNamespace(theta=z["theta"], xi=z["xi"], eta=z["eta"], nu=z["nu"])
        sd = Dataset(data.X, float(z["sign"]) * data.Y)
        report = compute_kkt_report(st, sd, float(z["rho"])).to_dict()
    else:
        # without the multipliers only primal feasibility of (theta, xi) is recoverable
        g = constraint_values(s * model.theta, s * model.xi, data.X)
        report = {"primal_feasibility": float(np.linalg.norm(np.maximum(g, 0.0)) / data.n),
                  "subgrad_stationarity": None, "theta_gradient": None, "complementarity": None}
    _write_text(dumps_json(report) + "\n", args.output)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "predict": cmd_predict, "smooth": cmd_smooth,
            "cv": cmd_cv, "diagnose": cmd_diagnose}


def _report_error(exc: CvxRegError, json_errors: bool) -> None:
    if json_errors:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc), "exit_code": exc.exit_code}) + "\n")
    else:
        sys.stderr.write(f"cvxreg: {exc}\n")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            ctx = threadpool_limits(limits=args.threads)
        else:
            ctx = nullcontext()
        with ctx:
            return COMMANDS[args.command](args)
    except CvxRegError as exc:
        _report_error(exc, json_errors)
        return exc.exit_code
    except OSError as exc:
        err = InputError(f"{exc.filename or ''}: {exc.strerror or exc}")
        _report_error(err, json_errors)
        return EXIT_INPUT
    except (KeyError, ValueError) as exc:
        err = InputError(f"malformed input: {exc}")
        _report_error(err, json_errors)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
