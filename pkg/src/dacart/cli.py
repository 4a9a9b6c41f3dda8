"""``dacart`` command line.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure
(degenerate weights, KLIEP constraint), 4 internal error. Diagnostics go to
stderr; stdout carries data only.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from importlib import metadata

import numpy as np

from . import tree as cart
from .boost import BoostParams
from .config import resolve_config, scenario_to_text
from .data import parse_dataset
from .errors import NumericalError, UserError
from .pipeline import (
    ESTIMATORS,
    NoInformativeVariables,
    estimate_weights,
    fallback_selection,
    fit_bagged,
    fit_da_cart,
    model_from_dict,
    model_to_dict,
    predict_model,
    select_variables,
)
from .simlab import bias_demo, run_study
from .tree import CLASSIFICATION, REGRESSION, FitParams
from .weights import DEFAULT_TRUNC, propensity_weights

log = logging.getLogger("dacart")

MODELS = ("cart", "da-cart", "bt", "da-bt-bootstrap", "da-bt-split")
EXIT_OK, EXIT_USER, EXIT_NUMERIC, EXIT_INTERNAL = 0, 2, 3, 4


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _names(s: str | None):
    if s is None:
        return None
    out = [x.strip() for x in s.split(",") if x.strip()]
    if not out:
        raise UserError("empty feature list")
    return out


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=False, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_manifest(path, args, argv, config, started):
    """Record everything needed to rerun the command that wrote ``path``."""
    _write_json(
        str(path) + ".manifest.json",
        {
            "command": ["dacart", *argv],
            "subcommand": args.command,
            "seed": getattr(args, "seed", None),
            "config": config,
            "version": _version(),
            "started": started,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        },
    )


# ---------------------------------------------------------------- commands


def _fit_params(args) -> FitParams:
    return FitParams(
        max_depth=args.max_depth,
        min_node_weight=args.min_node_weight,
        min_gain=args.min_gain,
        prune=not args.no_prune,
        cv_folds=args.cv_folds,
        seed=args.seed,
    )


def _boost_params(args) -> BoostParams:
    return BoostParams(args.boost_rounds, args.learning_rate, args.boost_depth, seed=args.seed)


def cmd_fit(args):
    task = CLASSIFICATION if args.task == "classification" else REGRESSION
    source = parse_dataset(args.source, response=args.response)
    true_wv = None
    if args.propensity_column:
        if args.propensity_column not in source.names:
            raise UserError(f"propensity column {args.propensity_column!r} not in {args.source}")
        p = source.column(args.propensity_column)
        source = source.select([n for n in source.names if n != args.propensity_column])
        true_wv = propensity_weights(p, args.trunc)
    if args.estimator == "true" and true_wv is None and args.model != "cart":
        raise UserError("--estimator true needs --propensity-column")
    needs_target = args.model != "cart" and args.estimator in ("ew", "kliep")
    if needs_target and not args.target:
        raise UserError(f"--model {args.model} with --estimator {args.estimator} needs --target")
    target = parse_dataset(args.target) if args.target and args.model != "cart" else None
    params = _fit_params(args)
    if args.model in ("bt", "da-bt-bootstrap", "da-bt-split"):
        params = replace(params, prune=False)
    wf = _names(args.weight_features)
    report = {"model": args.model, "seed": args.seed}

    if args.model == "cart":
        model = cart.fit(source, None, None, params, task)
    elif args.model == "da-cart":
        model = fit_da_cart(
            source, target, args.estimator, params, threshold=args.threshold, weight_features=wf,
            boost=_boost_params(args), trunc=args.trunc, true_weights=true_wv, task=task,
        )
        report["selection"] = {"selected": model.selection.selected, "shares": model.selection.shares,
                               "fallback": model.selection.fallback}
        report["weight_features"] = model.weight_features
        report["weights"] = model.weights.summary()
    elif args.model == "bt":
        model = fit_bagged(source, "naive", None, args.n_trees, params, args.seed, None, task, args.workers)
    else:
        try:
            sel = select_variables(source, replace(params, prune=True), args.threshold, task)
        except NoInformativeVariables:
            sel = fallback_selection(source.names, args.threshold)
        feats = wf or sel.selected
        wv, _ = estimate_weights(source, target, args.estimator, feats, _boost_params(args), args.trunc,
                                 true_wv, args.seed)
        variant = "da_bootstrap" if args.model == "da-bt-bootstrap" else "da_split"
        model = fit_bagged(source, variant, wv, args.n_trees, params, args.seed, sel.selected, task, args.workers)
        report["selection"] = {"selected": sel.selected, "shares": sel.shares, "fallback": sel.fallback}
        report["weight_features"] = feats
        report["weights"] = wv.summary()

    _write_json(args.out, model_to_dict(model))
    write_manifest(args.out, args, args.argv, None, args.started)
    if args.report:
        _write_json(args.report, report)
        write_manifest(args.report, args, args.argv, None, args.started)
    if args.dump_tree:
        t = model if isinstance(model, cart.Tree) else getattr(model, "tree", None)
        if t is None:
            raise UserError("--dump-tree applies to cart and da-cart models")
        with open(args.dump_tree, "w", encoding="utf-8") as fh:
            fh.write(cart.dump_tree(t))
    json.dump(report, sys.stdout, default=_jsonable)
    sys.stdout.write("\n")


def _load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise UserError(f"cannot read model {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: not a model file ({exc})") from None
    try:
        return model_from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise UserError(f"{path}: malformed model file ({exc})") from None


def cmd_predict(args):
    model = _load_model(args.model)
    rows = parse_dataset(args.rows, allow_empty=True)
    pred = predict_model(model, rows)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("prediction\n")
        for v in pred:
            fh.write(format(v, ".17g") + "\n")
    write_manifest(args.out, args, args.argv, None, args.started)


def cmd_weights(args):
    source = parse_dataset(args.source, response=args.response)
    true_wv = None
    if args.estimator == "true":
        if not args.propensity_column or args.propensity_column not in source.names:
            raise UserError("--estimator true needs --propensity-column naming a source column")
        true_wv = propensity_weights(source.column(args.propensity_column), args.trunc)
    target = parse_dataset(args.target) if args.target else None
    feats = _names(args.features) or [n for n in source.names if n != args.propensity_column]
    wv, _ = estimate_weights(source, target, args.estimator, feats, _boost_params(args), args.trunc, true_wv,
                             args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("weight\n")
        for v in wv.values:
            fh.write(format(v, ".17g") + "\n")
    write_manifest(args.out, args, args.argv, None, args.started)
    json.dump(wv.summary(), sys.stdout, default=_jsonable)
    sys.stdout.write("\n")


def cmd_importance(args):
    source = parse_dataset(args.source, response=args.response)
    task = CLASSIFICATION if args.task == "classification" else REGRESSION
    try:
        sel = select_variables(source, _fit_params(args), args.threshold, task)
    except NoInformativeVariables:
        sel = fallback_selection(source.names, args.threshold)
    sys.stdout.write("feature,share,selected\n")
    for name in source.names:
        sys.stdout.write(f"{name},{format(sel.shares[name], '.17g')},{int(name in sel.selected)}\n")


def cmd_simulate(args):
    overrides = list(args.set or [])
    if args.reps is not None:
        overrides.append(f"scenario.replications={args.reps}")
    if args.n is not None:
        overrides.append(f"scenario.n_source={args.n}")
    if args.seed is not None:
        overrides.append(f"scenario.master_seed={args.seed}")
    sc = resolve_config(args.config, overrides)
    args.seed = sc.master_seed
    log.info("scenario %s, master seed %d, %d replications", sc.name, sc.master_seed, sc.replications)
    result = run_study(sc, workers=args.workers)
    text = result.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        write_manifest(args.out, args, args.argv, scenario_to_text(sc), args.started)
    else:
        sys.stdout.write(text)
    if args.summary:
        with open(args.summary, "w", encoding="utf-8", newline="") as fh:
            fh.write(result.summary_csv())
    if result.failures:
        log.warning("%d replication(s) failed and were excluded", len(result.failures))


def cmd_bias_demo(args):
    res = bias_demo(args.reps, args.seed, args.n)
    out = {
        "replications": args.reps,
        "seed": args.seed,
        "mean_mse_ols": res.mean_mse_ols,
        "mean_mse_cart": res.mean_mse_cart,
        "ratio": res.mean_mse_cart / res.mean_mse_ols,
    }
    if args.out:
        _write_json(args.out, out)
        write_manifest(args.out, args, args.argv, None, args.started)
    json.dump(out, sys.stdout)
    sys.stdout.write("\n")


# ---------------------------------------------------------------- parser


def _add_tree_args(p):
    g = p.add_argument_group("tree")
    g.add_argument("--max-depth", type=int, default=30)
    g.add_argument("--min-node-weight", type=float, default=10.0)
    g.add_argument("--min-gain", type=float, default=0.0)
    g.add_argument("--cv-folds", type=int, default=5)
    g.add_argument("--no-prune", action="store_true", help="skip cost-complexity pruning")
    g.add_argument("--task", choices=("regression", "classification"), default="regression")


def _add_weight_args(p):
    g = p.add_argument_group("weights")
    g.add_argument("--trunc", type=_trunc_arg, default=DEFAULT_TRUNC, metavar="LO,HI")
    g.add_argument("--propensity-column", help="source column holding known P(W=1|x) for --estimator true")
    g.add_argument("--boost-rounds", type=int, default=100)
    g.add_argument("--learning-rate", type=float, default=0.1)
    g.add_argument("--boost-depth", type=int, default=3)


def _trunc_arg(s):
    try:
        lo, hi = (float(x) for x in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO,HI") from None
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dacart", description="Importance-weighted CART for covariate shift.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    workers = os.cpu_count() or 1

    p = sub.add_parser("fit", help="fit a model on labelled source rows")
    p.add_argument("--source", required=True)
    p.add_argument("--target", help="unlabelled target rows (needed by ew and kliep)")
    p.add_argument("--response", required=True)
    p.add_argument("--model", choices=MODELS, default="da-cart")
    p.add_argument("--estimator", choices=ESTIMATORS, default="ew")
    p.add_argument("--weight-features", help="comma-separated features for the weight model")
    p.add_argument("--threshold", type=float, default=0.85, help="cumulative gain share for selection")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=workers)
    p.add_argument("--out", required=True, help="model file (JSON)")
    p.add_argument("--report", help="selection and weight report (JSON)")
    p.add_argument("--dump-tree", help="write the fitted tree as nested JSON")
    _add_tree_args(p)
    _add_weight_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict rows with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--rows", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("weights", help="importance weights for source rows")
    p.add_argument("--source", required=True)
    p.add_argument("--target")
    p.add_argument("--response", help="response column to drop from the source")
    p.add_argument("--estimator", choices=ESTIMATORS, default="ew")
    p.add_argument("--features", help="comma-separated weight-model features (default: all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_weight_args(p)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("importance", help="gain shares and the selected features")
    p.add_argument("--source", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--threshold", type=float, default=0.85)
    p.add_argument("--seed", type=int, default=0)
    _add_tree_args(p)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("simulate", help="run a simulation scenario")
    p.add_argument("--config", required=True, help="config file or bundled name, e.g. restricted_x1")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config field")
    p.add_argument("--reps", type=int)
    p.add_argument("--n", type=int, help="source training size")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, default=workers)
    p.add_argument("--out", help="result CSV (default: stdout)")
    p.add_argument("--summary", help="per-model median/IQR CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bias-demo", help="OLS versus CART under selection on X2")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bias_demo)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="dacart: %(message)s",
                        stream=sys.stderr)
    args.argv = argv
    args.started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        args.func(args)
    except UserError as exc:
        print(f"dacart: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except NumericalError as exc:
        print(f"dacart: numerical error ({type(exc).__module__}.{type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001
        print(f"dacart: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if getattr(args, "seed", None) is not None:
        print(f"dacart: seed {args.seed}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
