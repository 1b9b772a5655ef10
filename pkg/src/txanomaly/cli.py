"""Command line interface.

Subcommands mirror the pipeline stages::

    txanomaly prepare    --input raw.csv --out-dir prep [--keep-negatives 200000]
    txanomaly sample     --input train.csv --sampler xgbclus --out-dir s
    txanomaly train      --input s/sampled.csv --model rf --param n_trees=50 --out-dir m
    txanomaly evaluate   --model m/model.json --input test.csv --out-dir e
    txanomaly explain    --model m/model.json --input test.csv --background train.csv --out-dir x
    txanomaly rules      --input s/sampled.csv --max-depth 10 --out-dir r
    txanomaly experiment --config run.json [--out-dir results] [--jobs 4]

Exit status: 0 on success, 2 for usage, configuration, schema or model
mismatch errors, 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .config import ConfigError, _model, load_config
from .dataset import DataError, SchemaError, stratified_split
from .experiment import (
    FeatureMismatchError,
    OutputDir,
    StageError,
    align_features,
    correlation_csv,
    explain_rows,
    fit_model,
    load_any,
    predict_labels,
    prepare,
    select_instances,
    ttest_csv,
)
from .explain import background_sample, global_importance
from .learners import TreeModel, fit_tree, make_params
from .metrics import evaluate, metrics_json
from .rules import extract_rules, gini_importances, rules_json, rules_table
from .sampling import SAMPLERS, run_sampler
from .seeding import derive_seed
from .serialize import ModelFormatError, load_model, save_model

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
INPUT_ERRORS = (ConfigError, SchemaError, DataError, ModelFormatError, FeatureMismatchError, FileNotFoundError)

log = logging.getLogger("txanomaly")


class UsageError(ValueError):
    pass


def parse_params(items) -> dict:
    """``key=value`` pairs; values are parsed as JSON when possible."""
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma separated integers, got {text!r}") from None


def _need(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    if args.config:
        return load_config(args.config).seed
    return 0


def _out(args, command: str) -> OutputDir:
    return OutputDir(_need(args.out_dir, "--out-dir"), command)


# ------------------------------------------------------------------ commands


def cmd_prepare(args) -> int:
    pre = {}
    path = args.input
    seed = _seed(args)
    if args.config:
        cfg = load_config(args.config)
        pre = dict(cfg.preprocess)
        path = path or cfg.input.get("path")
        seed = cfg.seed if args.seed is None else args.seed
    raw = load_any(_need(path, "--input"))
    drop = pre.get("drop")
    if args.drop is not None:
        drop = [] if args.drop.strip().lower() == "none" else [c.strip() for c in args.drop.split(",") if c.strip()]
    unknown = sorted(set(drop or []) - set(raw.feature_names))
    if unknown:
        raise SchemaError(f"--drop names columns not in the input: {unknown}")
    keep = args.keep_negatives if args.keep_negatives is not None else pre.get("keep_negatives")
    p_thr = args.p_threshold if args.p_threshold is not None else pre.get("p_threshold", 0.01)
    dedup = pre.get("dedup", True) and not args.no_dedup

    out = _out(args, "prepare")
    with out.single("prepare"):
        p = prepare(raw, drop, dedup, keep, derive_seed(seed, "prepare"))
        out.dataset("prepared.csv", p.data)
        out.text("ttest.csv", ttest_csv(p.ttest, p_thr))
        out.text("correlation.csv", correlation_csv(p.data.feature_names, p.correlation))
        tf = args.test_fraction if args.test_fraction is not None else pre.get("test_fraction")
        if tf is not None:
            split = stratified_split(p.data, tf, derive_seed(seed, "split"))
            out.dataset("train.csv", split.train)
            out.dataset("test.csv", split.test)
    print(f"{p.source_rows} rows in, {len(p.data)} rows out "
          f"({p.data.n_positive} anomalous, {p.data.n_negative} normal); wrote {out.root}")
    return EXIT_OK


def cmd_sample(args) -> int:
    train = load_any(_need(args.input, "--input"), strict=False)
    params = parse_params(args.param)
    selector = None
    if args.selector:
        selector = align_features(load_any(args.selector, strict=False), train.feature_names)
    out = _out(args, "sample")
    with out.single("sample"):
        res = run_sampler(args.sampler, train, derive_seed(_seed(args), "sampler", args.sampler), params, selector)
        out.dataset("sampled.csv", res.data)
        out.text("balance.json", res.report.to_json() + "\n")
        if res.trace is not None:
            out.text("xgbclus_trace.json", res.trace.to_json() + "\n")
    print(f"{args.sampler}: {res.data.n_positive} anomalous / {res.data.n_negative} normal; wrote {out.root}")
    return EXIT_OK


def _model_spec(kind: str, params: dict):
    if kind in ("stacked", "voting"):
        raw = {"kind": kind, **params}
    else:
        raw = {"kind": kind, "params": params}
    return _model(raw, 0)


def cmd_train(args) -> int:
    train = load_any(_need(args.input, "--input"), strict=False)
    params = parse_params(args.param)
    spec = _model_spec(args.model, params)
    seed = derive_seed(_seed(args), "model", args.model)
    out = _out(args, "train")
    with out.single("train"):
        model = fit_model(spec, train, seed)
        meta = {"kind": args.model, "params": params, "seed": seed, "train_rows": len(train)}
        save_model(model, out.path("model.json"), meta)
    print(f"trained {args.model} on {len(train)} rows; wrote {out.root / 'model.json'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(_need(args.model, "--model"))
    data = align_features(load_any(_need(args.input, "--input"), strict=False), model.feature_names)
    out = _out(args, "evaluate")
    with out.single("evaluate"):
        labels, scores = predict_labels(model, data.X)
        rep = evaluate(data.y, scores, labels)
        out.text("metrics.json", metrics_json([rep.row()]) + "\n")
        if rep.roc is not None:
            out.text("roc.csv", rep.roc.to_csv())
    print(json.dumps(rep.row(), sort_keys=True))
    return EXIT_OK


def cmd_explain(args) -> int:
    model = load_model(_need(args.model, "--model"))
    data = align_features(load_any(_need(args.input, "--input"), strict=False), model.feature_names)
    bg_src = data if args.background is None else align_features(load_any(args.background, strict=False),
                                                                 model.feature_names)
    seed = derive_seed(_seed(args), "shap")
    rows = select_instances(data, args.positives, args.negatives, _int_list(args.rows) if args.rows else None)
    out = _out(args, "explain")
    with out.single("explain"):
        bg = background_sample(bg_src, args.n_background, seed)
        records, attributions = explain_rows(model, data, bg, rows, args.n_coalitions, seed)
        out.json("shap_force.json", {"records": records})
        if attributions:
            out.text("shap_global.csv", global_importance(attributions, data.feature_names).to_csv())
    print(f"explained {len(rows)} rows against {len(bg)} background rows; wrote {out.root}")
    return EXIT_OK


def cmd_rules(args) -> int:
    out = _out(args, "rules")
    if args.model:
        tree = load_model(args.model)
        if not isinstance(tree, TreeModel):
            raise ModelFormatError("rules needs a single decision tree model")
        train = None
    else:
        train = load_any(_need(args.input, "--input"), strict=False)
        tree = None
    ref_path = args.reference or args.input
    reference = align_features(load_any(_need(ref_path, "--reference"), strict=False),
                               tree.feature_names if tree is not None else train.feature_names)
    with out.single("rules"):
        if tree is None:
            tree = fit_tree(train.X, train.y, make_params("dt", {"max_depth": args.max_depth}),
                            feature_names=train.feature_names)
            save_model(tree, out.path("tree.json"), {"max_depth": args.max_depth})
        rules = extract_rules(tree, reference, 1, args.min_support, args.min_confidence)
        out.text("rules.json", rules_json(rules) + "\n")
        out.text("rules.txt", rules_table(rules))
        out.text("importances.csv", gini_importances(tree).to_csv())
    print(rules_table(rules), end="")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiment import run_experiment

    cfg = load_config(_need(args.config, "--config"))
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.raw = {**cfg.raw, "seed": args.seed}
    if args.input is not None:
        cfg.input = {"path": args.input}
        cfg.raw = {**cfg.raw, "input": cfg.input}
    if args.paper_faithful:
        cfg.paper_faithful = True
        cfg.raw = {**cfg.raw, "paper_faithful": True}
    out_dir = args.out_dir or cfg.out_dir
    if out_dir is None:
        raise UsageError("give --out-dir or set out_dir in the config")
    manifest = run_experiment(cfg, out_dir, None if args.quiet else print, jobs=args.jobs)
    print(f"wrote {manifest}")
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, default=None, help="root seed")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--input", help="input CSV")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="txanomaly", description="Anomaly detection on imbalanced transaction data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", parents=[common], help="feature selection, dedup, t-tests, correlation")
    s.add_argument("--drop", help="comma separated columns to drop, or 'none' (default: the standard policy)")
    s.add_argument("--no-dedup", action="store_true", help="keep duplicate normal rows")
    s.add_argument("--keep-negatives", type=int, help="cap normal rows after dedup")
    s.add_argument("--p-threshold", type=float, help="significance level for the t-test report (0.01)")
    s.add_argument("--test-fraction", type=float, help="also write a stratified train/test split")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("sample", parents=[common], help="rebalance a training set")
    s.add_argument("--sampler", required=True, choices=SAMPLERS)
    s.add_argument("--param", action="append", metavar="KEY=VALUE", help="sampler option (repeatable)")
    s.add_argument("--selector", help="XGBCLUS selector set (default: 20%% of the input)")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("train", parents=[common], help="fit a learner or ensemble")
    s.add_argument("--model", required=True, choices=("dt", "rf", "gb", "xgb", "adb", "lr", "stacked", "voting"))
    s.add_argument("--param", action="append", metavar="KEY=VALUE", help="hyperparameter (repeatable)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="score a saved model")
    s.add_argument("--model", help="model JSON")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("explain", parents=[common], help="KernelSHAP attributions")
    s.add_argument("--model", help="model JSON")
    s.add_argument("--background", help="background CSV (default: the input)")
    s.add_argument("--n-background", type=int, default=100)
    s.add_argument("--rows", help="comma separated row indices of the input to explain")
    s.add_argument("--positives", type=int, default=2, help="first N anomalous rows (without --rows)")
    s.add_argument("--negatives", type=int, default=2, help="first N normal rows (without --rows)")
    s.add_argument("--n-coalitions", type=int, help="sample this many coalitions instead of enumerating")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("rules", parents=[common], help="anomaly rules from tree paths")
    s.add_argument("--model", help="saved tree JSON (otherwise a tree is fitted on --input)")
    s.add_argument("--reference", help="CSV used to score rules (default: the input)")
    s.add_argument("--max-depth", type=int, default=10)
    s.add_argument("--min-support", type=int, default=5)
    s.add_argument("--min-confidence", type=float, default=0.9)
    s.set_defaults(func=cmd_rules)

    s = sub.add_parser("experiment", parents=[common], help="run a configured sampler x model grid")
    s.add_argument("--paper-faithful", action="store_true", help="XGBCLUS scores candidates on the test split")
    s.add_argument("--jobs", type=int, default=1, help="worker processes for grid cells")
    s.add_argument("-q", "--quiet", action="store_true")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"txanomaly: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except INPUT_ERRORS as e:
        print(f"txanomaly: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as e:
        if isinstance(e.cause, INPUT_ERRORS):
            print(f"txanomaly: error in stage {e.stage}: {e.cause}", file=sys.stderr)
            return EXIT_USAGE
        print(f"txanomaly: stage {e.stage} failed: {e.cause}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001
        print(f"txanomaly: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
