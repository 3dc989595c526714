"""Command-line interface: ``grenkit {fit,simulate,chernoff,tau}``.

Exit codes: 0 success, 2 invalid input (schema, flags, manifest, model
spec), 3 estimator failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import estimators as est
from .asymptotics import TrueModel, chernoff_oracle, tau_density, tau_hazard, tau_regression
from .data import SchemaError, format_float, read_regression_csv, read_survival_csv, write_xy_csv
from .simulation import ESTIMATORS, RunManifest, StudyError, get_setting, run_study, true_marginals

log = logging.getLogger("grenkit")

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATOR = 0, 2, 3
DEFAULT_SEED = 20240101


class InputError(Exception):
    """Bad flags or input files (exit 2)."""


def _default_seed() -> int:
    env = os.environ.get("GRENKIT_SEED")
    if env is None:
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise InputError(f"GRENKIT_SEED must be an integer, got {env!r}") from None


def _parse_grid(spec: str) -> np.ndarray:
    try:
        start, stop, step = (float(p) for p in spec.split(":"))
    except ValueError:
        raise InputError(f"--eval-grid must be start:stop:step, got {spec!r}") from None
    if step <= 0 or stop < start:
        raise InputError("--eval-grid needs step > 0 and stop >= start")
    k = int(np.floor((stop - start) / step + 1e-9))
    # rounding removes accumulation noise such as 0.30000000000000004
    return np.round(start + step * np.arange(k + 1), 12)


def _fit_estimate(args):
    target, adjust = args.target, args.adjust
    if target in ("density", "hazard"):
        if adjust not in ("none", "independent", "conditional"):
            raise InputError(f"--adjust {adjust} is not valid for --target {target}")
        sample = read_survival_csv(args.input)
        if adjust == "conditional" and sample.d < 1:
            raise InputError("--adjust conditional needs covariate columns w1..wd")
        if target == "density":
            if adjust == "none":
                fit = est.grenander_density(sample.y, upper=args.upper)
            elif adjust == "independent":
                fit = est.censored_density(sample, upper=args.upper)
            else:
                fit = est.monotone_density_adjusted(sample, upper=args.upper)
        else:
            fit = est.monotone_hazard(sample, adjust, upper=args.upper)
        default_grid = np.unique(sample.y)
    else:
        if adjust not in ("none", "marginalized"):
            raise InputError(f"--adjust {adjust} is not valid for --target regression")
        a, y, w = read_regression_csv(args.input)
        if adjust == "none":
            fit = est.isotonic_regression(a, y)
        else:
            if w.shape[1] < 1:
                raise InputError("--adjust marginalized needs covariate columns w1..wd")
            fit = est.marginalized_regression(a, y, w, est.default_nuisances(a, y, w))
        default_grid = np.unique(a)
    return fit, default_grid


def cmd_fit(args) -> int:
    try:
        fit, grid = _fit_estimate(args)
    except (InputError, SchemaError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        log.error("estimator failed: %s", exc)
        return EXIT_ESTIMATOR
    if args.eval_grid:
        try:
            grid = _parse_grid(args.eval_grid)
        except InputError as exc:
            log.error("%s", exc)
            return EXIT_INPUT
    values = fit(grid)
    boundary = int(np.sum(fit.at_boundary(grid)))
    log.info("diagram size: %d", len(fit.diagram))
    log.info("u_n: %s", format_float(fit.u_max))
    log.info("boundary-warning points: %d of %d", boundary, grid.size)
    if args.output in (None, "-"):
        write_xy_csv(sys.stdout, grid, values)
    else:
        write_xy_csv(args.output, grid, values)
    return EXIT_OK


def _manifest_from_args(args) -> RunManifest:
    if args.manifest:
        try:
            with open(args.manifest, encoding="utf-8") as fh:
                data = json.load(fh)
            if not isinstance(data, dict) or "setting" not in data:
                raise InputError("manifest must be a JSON object with a 'setting'")
            data.setdefault("n", 2000)
            data.setdefault("reps", 500)
            data.setdefault("seed", _default_seed())
            return RunManifest.from_dict(data)
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            raise InputError(f"malformed manifest: {exc}") from None
    if args.setting is None:
        raise InputError("give --manifest or --setting")
    n, reps = (5000, 1000) if args.full_scale else (2000, 500)
    kwargs = {
        "setting": get_setting(args.setting),
        "n": args.n if args.n is not None else n,
        "reps": args.reps if args.reps is not None else reps,
        "seed": args.seed if args.seed is not None else _default_seed(),
        "upper": args.upper,
    }
    if args.x_eval:
        kwargs["x_eval"] = tuple(float(v) for v in args.x_eval.split(","))
    if args.estimators:
        kwargs["estimators"] = tuple(args.estimators.split(","))
    return RunManifest(**kwargs)


def cmd_simulate(args) -> int:
    try:
        manifest = _manifest_from_args(args)
    except (InputError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    try:
        result = run_study(manifest, threads=args.threads)
    except StudyError as exc:
        log.error("%s", exc)
        return EXIT_ESTIMATOR
    paths = result.write(args.out, prefix=args.prefix)
    for key, path in paths.items():
        log.info("%s: %s", key, path)
    return EXIT_OK


def _emit_json(payload: dict, out) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def cmd_chernoff(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        table = chernoff_oracle(L=args.grid_L, h=args.grid_h, reps=args.reps, seed=seed)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    payload = table.to_dict()
    if args.check_symmetry:
        q = table.quantiles
        anti = max(abs(q[p] + q[round(1 - p, 10)]) for p in q if p < 0.5)
        payload["symmetry"] = {
            "mean_within_3se": bool(abs(table.mean) <= 3 * table.mean_se),
            "max_quantile_asymmetry": anti,
        }
    _emit_json(payload, args.out)
    return EXIT_OK


_SCALAR_KEYS = (
    "density",
    "density_deriv",
    "survival",
    "hazard",
    "hazard_deriv",
    "censor_survival",
    "regression_deriv",
    "variance",
    "exposure_density",
    "dose_response_deriv",
)
_COND_KEYS = ("cond_density", "cond_survival", "cond_censor_survival", "cond_variance", "cond_exposure_density")


def model_from_spec(spec: dict) -> TrueModel:
    """Build a :class:`TrueModel` from a JSON model spec.

    Either ``{"setting": "i"}`` (the simulation truth) or ingredient values
    at the evaluation point: scalars for marginal quantities, and for
    covariate integrals a ``"weights"`` list with one value per covariate
    node in each ``cond_*`` list.
    """
    if not isinstance(spec, dict):
        raise InputError("model spec must be a JSON object")
    if "setting" in spec:
        try:
            return true_marginals(get_setting(spec["setting"]))
        except ValueError as exc:
            raise InputError(str(exc)) from None
    unknown = set(spec) - set(_SCALAR_KEYS) - set(_COND_KEYS) - {"weights"}
    if unknown:
        raise InputError(f"unknown model spec keys: {sorted(unknown)}")
    kwargs = {}
    for key in _SCALAR_KEYS:
        if key in spec:
            try:
                val = float(spec[key])
            except (TypeError, ValueError):
                raise InputError(f"{key} must be a number") from None
            kwargs[key] = lambda x, v=val: v
    cond = [k for k in _COND_KEYS if k in spec]
    if cond:
        if "weights" not in spec:
            raise InputError("conditional ingredients need 'weights'")
        weights = np.asarray(spec["weights"], dtype=float)
        if weights.ndim != 1 or weights.size == 0 or np.any(weights < 0):
            raise InputError("weights must be a non-empty list of non-negative numbers")
        weights = weights / weights.sum()
        for key in cond:
            vals = np.asarray(spec[key], dtype=float)
            if vals.shape != weights.shape:
                raise InputError(f"{key} needs one value per weight")
            kwargs[key] = lambda x, w, v=vals: v[np.asarray(w)[:, 0].astype(int)]
        kwargs["covariate_quadrature"] = (np.arange(weights.size, dtype=float)[:, None], weights)
    return TrueModel(**kwargs)


def cmd_tau(args) -> int:
    try:
        with open(args.model, encoding="utf-8") as fh:
            spec = json.load(fh)
        model = model_from_spec(spec)
        if args.example == "density":
            report = tau_density(model, args.x, args.censoring, mc_w=args.mc_w)
        elif args.example == "hazard":
            report = tau_hazard(model, args.x, args.censoring, mc_w=args.mc_w)
        else:
            report = tau_regression(model, args.x, marginalized=args.marginalized, mc_w=args.mc_w)
    except (OSError, json.JSONDecodeError, InputError, ValueError, TypeError) as exc:
        log.error("invalid model spec: %s", exc)
        return EXIT_INPUT
    _emit_json(report.to_dict(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grenkit", description="Generalized Grenander-type monotone estimation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a monotone density, hazard or regression from CSV")
    p.add_argument("input", help="CSV: y,delta[,w1..] (density/hazard) or a,y[,w1..] (regression)")
    p.add_argument("--target", choices=("density", "hazard", "regression"), required=True)
    p.add_argument(
        "--adjust", default="none", choices=("none", "independent", "conditional", "marginalized")
    )
    p.add_argument("--eval-grid", help="start:stop:step (default: observed values)")
    p.add_argument("--upper", type=float, default=None, help="right end of the isotonization interval")
    p.add_argument("-o", "--output", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run the Weibull Monte Carlo study")
    p.add_argument("--manifest", help="JSON manifest (setting, n, reps, seed, x_eval, estimators, upper)")
    p.add_argument("--setting", help="i, ii, iii or iv")
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--x-eval", help="comma-separated points in (0, 1)")
    p.add_argument("--estimators", help=f"comma-separated subset of {','.join(ESTIMATORS)}")
    p.add_argument("--upper", type=float, default=1.0)
    p.add_argument("--full-scale", action="store_true", help="n=5000, reps=1000 defaults")
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: all cores)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--prefix", default="study")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("chernoff", help="tabulate the Chernoff distribution by simulation")
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--grid-L", type=float, default=6.0)
    p.add_argument("--grid-h", type=float, default=0.005)
    p.add_argument("--seed", type=int)
    p.add_argument("--check-symmetry", action="store_true")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_chernoff)

    p = sub.add_parser("tau", help="scale factor of the Chernoff limit")
    p.add_argument("--example", choices=("density", "hazard", "regression"), required=True)
    p.add_argument("--censoring", choices=("none", "independent", "conditional"), default="none")
    p.add_argument("--marginalized", action="store_true", help="regression: covariate-marginalized")
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--model", required=True, help="model-spec JSON")
    p.add_argument("--mc-w", type=int, default=100_000)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_tau)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
