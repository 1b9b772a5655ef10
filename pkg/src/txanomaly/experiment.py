"""End-to-end experiment runner: prepare, sample, train, evaluate, explain, rules.

Every file written under the output directory is recorded in
``manifest.json`` with its SHA-256 digest. Numeric outputs depend only on the
configuration and its root seed; stage seeds come from
:func:`txanomaly.seeding.derive_seed`.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .config import ExperimentConfig, ModelSpec
from .dataset import (
    FULL_SCHEMA,
    LABEL,
    DEFAULT_DROP,
    REDUCED_SCHEMA,
    Dataset,
    SchemaError,
    cap_negatives,
    dedup_majority,
    gen_synthetic,
    load_csv,
    pearson_correlation,
    select_features,
    stratified_split,
    ttest_features,
    write_csv,
)
from .ensemble import MemberSpec, VotingModel, fit_stacked, fit_voting
from .explain import background_sample, force_record, global_importance, kernel_shap
from .learners import LogisticParams, fit_learner, fit_tree, hard_labels, make_params
from .metrics import evaluate, format_rate, metrics_grid_csv
from .rules import extract_rules, gini_importances, rules_json, rules_table
from .sampling import run_sampler
from .seeding import derive_seed
from .serialize import save_model

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ----------------------------------------------------------------- outputs


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    toolkit_version: str
    command: str
    started: str = ""
    finished: str = ""
    stages: list[dict] = field(default_factory=list)
    artifacts: list[dict] = field(default_factory=list)
    complete: bool = False


class OutputDir:
    """Writes artifacts and keeps the manifest in step with the directory."""

    def __init__(self, root: str | Path, command: str, config_hash: str = ""):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.manifest = RunManifest(config_hash, __version__, command, started=_now())

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if rel not in self.files:
            self.files.append(rel)
        return p

    def text(self, rel: str, content: str) -> Path:
        p = self.path(rel)
        p.write_text(content)
        return p

    def json(self, rel: str, obj: Any) -> Path:
        return self.text(rel, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def dataset(self, rel: str, d: Dataset) -> Path:
        p = self.path(rel)
        write_csv(d, p)
        return p

    def stage(self, name: str) -> "_Stage":
        return _Stage(self, name)

    @contextmanager
    def single(self, name: str):
        """One-stage run: the manifest is written whether or not it succeeds."""
        try:
            with self.stage(name) as st:
                yield st
        except StageError:
            self.finish(complete=False)
            raise
        self.finish(complete=True)

    def finish(self, complete: bool) -> Path:
        m = self.manifest
        m.finished = _now()
        m.complete = complete
        m.artifacts = []
        for rel in sorted(self.files):
            p = self.root / rel
            if p.exists():
                m.artifacts.append({"path": rel, "sha256": sha256_file(p), "bytes": p.stat().st_size})
        target = self.root / "manifest.json"
        target.write_text(json.dumps(asdict(m), indent=2) + "\n")
        return target


class _Stage:
    def __init__(self, out: OutputDir, name: str):
        self.out = out
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "complete" if exc is None else "failed"
        entry = {"name": self.name, "status": status, "seconds": round(time.perf_counter() - self.t0, 3)}
        if exc is not None:
            entry["error"] = f"{exc_type.__name__}: {exc}"
        self.out.manifest.stages.append(entry)
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ----------------------------------------------------------- preparation


def detect_schema(path: str | Path, strict: bool = True) -> tuple[str, ...]:
    """Column set of a data file.

    Strict mode accepts only the 12- or 7-column transaction schemas; otherwise
    any header containing the label column is taken as-is.
    """
    with Path(path).open(newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise SchemaError(f"{path}: empty file")
    cols = [h.strip() for h in header]
    if set(cols) == set(FULL_SCHEMA):
        return FULL_SCHEMA
    if set(cols) == set(REDUCED_SCHEMA):
        return REDUCED_SCHEMA
    if not strict and LABEL in cols:
        return tuple(cols)
    if LABEL not in cols:
        raise SchemaError(f"{path}: label column {LABEL!r} is missing")
    raise SchemaError(
        f"{path}: header matches neither the 12-column nor the 7-column schema; "
        f"missing {sorted(set(FULL_SCHEMA) - set(cols))}, unexpected {sorted(set(cols) - set(FULL_SCHEMA))}"
    )


def load_any(path: str | Path, strict: bool = True) -> Dataset:
    return load_csv(path, detect_schema(path, strict))


class FeatureMismatchError(ValueError):
    pass


def align_features(d: Dataset, names) -> Dataset:
    """Reorder ``d``'s columns to ``names``; differing feature sets are an error."""
    names = tuple(names)
    if d.feature_names == names:
        return d
    if set(d.feature_names) != set(names) or len(names) != len(d.feature_names):
        raise FeatureMismatchError(
            f"model expects features {list(names)}, data has {list(d.feature_names)}"
        )
    idx = [d.feature_names.index(n) for n in names]
    return Dataset(names, d.X[:, idx], d.y, d.label_name)


@dataclass
class Prepared:
    data: Dataset
    ttest: list
    correlation: np.ndarray
    source_rows: int


def prepare(
    raw: Dataset,
    drop: list[str] | None = None,
    dedup: bool = True,
    keep_negatives: int | None = None,
    seed: int = 0,
) -> Prepared:
    """t-tests on every input feature, then feature selection, normal-row
    dedup and an optional cap on normal rows."""
    ttest = ttest_features(raw)
    if drop is None:
        drop = [c for c in DEFAULT_DROP if c in raw.feature_names]
    d = select_features(raw, drop)
    if dedup:
        d = dedup_majority(d)
    if keep_negatives is not None:
        d = cap_negatives(d, keep_negatives, seed)
    return Prepared(d, ttest, pearson_correlation(d), len(raw))


def ttest_csv(results, p_threshold: float = 0.01) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "t_value", "p_value", "df", "significant"])
    for r in results:
        w.writerow([r.feature, repr(r.t_value), repr(r.p_value), repr(r.degrees_of_freedom),
                    int(r.p_value < p_threshold)])
    return buf.getvalue()


def correlation_csv(names, corr: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", *names])
    for name, row in zip(names, corr):
        w.writerow([name, *(repr(float(v)) for v in row)])
    return buf.getvalue()


# ----------------------------------------------------------------- models


def fit_model(spec: ModelSpec, train: Dataset, seed: int):
    if spec.kind == "stacked":
        bases = [MemberSpec(b["name"], b["kind"], b["params"]) for b in spec.bases]
        return fit_stacked(train, bases, spec.folds, seed, LogisticParams(**spec.meta_params))
    if spec.kind == "voting":
        members = [MemberSpec(b["name"], b["kind"], b["params"]) for b in spec.members]
        return fit_voting(train, members, spec.mode, seed)
    return fit_learner(spec.kind, train.X, train.y, spec.params, seed=seed, feature_names=train.feature_names)


def predict_labels(model, X) -> tuple[np.ndarray, np.ndarray]:
    scores = model.predict_proba(X)
    labels = model.predict(X) if isinstance(model, VotingModel) else hard_labels(scores)
    return labels, scores


def metric_row(sampler: str, model: str, report, metrics) -> dict:
    row = {"sampler": sampler, "model": model}
    full = report.row()
    for m in metrics:
        row[m] = full[m]
    for k in ("tp", "fn", "fp", "tn"):
        row[k] = full[k]
    return row


def metrics_csv(rows: list[dict], metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["sampler", "model", *metrics, "tp", "fn", "fp", "tn"]
    w.writerow(cols)
    for r in rows:
        w.writerow([r["sampler"], r["model"], *(format_rate(r[m]) for m in metrics),
                    r["tp"], r["fn"], r["fp"], r["tn"]])
    return buf.getvalue()


# ----------------------------------------------------------------- runner


def load_input(cfg: ExperimentConfig) -> Dataset:
    if "path" in cfg.input:
        return load_any(cfg.input["path"], strict=False)
    s = cfg.input["synthetic"]
    return gen_synthetic(s["n_major"], s["n_minor"], s["separation"], s.get("seed", cfg.seed))


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    progress: Callable[[str], None] | None = None,
    jobs: int = 1,
) -> Path:
    """Run the configured grid; returns the manifest path.

    With ``jobs > 1`` grid cells run in worker processes. Every cell has its
    own derived seed, so results match a sequential run.

    Raises :class:`StageError` after writing a manifest that marks the run
    incomplete.
    """
    out = OutputDir(out_dir, "experiment", cfg.digest())
    out.json("config.json", cfg.raw)
    say = progress or (lambda msg: None)
    root = cfg.seed
    try:
        with out.stage("prepare"):
            raw = load_input(cfg)
            pre = cfg.preprocess
            prepared = prepare(raw, pre.get("drop"), pre.get("dedup", True), pre.get("keep_negatives"),
                               derive_seed(root, "prepare"))
            split = stratified_split(prepared.data, pre.get("test_fraction", 0.2), derive_seed(root, "split"))
            train, test = split.train, split.test
            out.text("ttest.csv", ttest_csv(prepared.ttest, pre.get("p_threshold", 0.01)))
            out.text("correlation.csv", correlation_csv(prepared.data.feature_names, prepared.correlation))
            out.dataset("data/train.csv", train)
            out.dataset("data/test.csv", test)
            say(f"prepared {len(prepared.data)} rows: train {len(train)}, test {len(test)}")

        sampled: dict[str, Dataset] = {}
        with out.stage("sample"):
            for name in cfg.samplers:
                opts = cfg.sampler_params.get(name, {})
                sel = test if (name == "xgbclus" and cfg.paper_faithful) else None
                res = run_sampler(name, train, derive_seed(root, "sampler", name), opts, selector_eval=sel)
                sampled[name] = res.data
                out.json(f"balance/{name}.json", asdict(res.report))
                if res.trace is not None:
                    out.json("xgbclus_trace.json", res.trace.to_dict())
                say(f"sampler {name}: {res.data.n_positive} anomalous / {res.data.n_negative} normal")

        rows: list[dict] = []
        fitted: dict[tuple[str, str], Any] = {}
        with out.stage("train_evaluate"):
            cells = [(sname, spec) for sname in cfg.samplers for spec in cfg.models]
            keep = {(cfg.shap.sampler, cfg.shap.model)} if cfg.shap.enabled else set()
            try:
                for (sname, spec), (rep, model) in zip(cells, _run_cells(cells, sampled, test, cfg, keep, jobs)):
                    rows.append(metric_row(sname, spec.name, rep, cfg.metrics))
                    if rep.roc is not None:
                        out.text(f"roc/{sname}__{spec.name}.csv", rep.roc.to_csv())
                    if model is not None:
                        fitted[(sname, spec.name)] = model
                    say(f"{sname} x {spec.name}: tpr={format_rate(rep.tpr)} fpr={format_rate(rep.fpr)}")
            finally:
                _write_metrics(out, rows, cfg)

        if cfg.shap.enabled:
            with out.stage("explain"):
                _explain_stage(out, cfg, fitted[(cfg.shap.sampler, cfg.shap.model)],
                               sampled[cfg.shap.sampler], test)

        if cfg.rules.enabled:
            with out.stage("rules"):
                _rules_stage(out, cfg, sampled[cfg.rules.sampler], test)
    except StageError:
        out.finish(complete=False)
        raise
    return out.finish(complete=True)


def _cell(spec: ModelSpec, train: Dataset, test: Dataset, seed: int, keep: bool):
    model = fit_model(spec, train, seed)
    labels, scores = predict_labels(model, test.X)
    return evaluate(test.y, scores, labels), (model if keep else None)


def _run_cells(cells, sampled, test, cfg: ExperimentConfig, keep: set, jobs: int):
    args = [
        (spec, sampled[sname], test, derive_seed(cfg.seed, "model", sname, spec.name), (sname, spec.name) in keep)
        for sname, spec in cells
    ]
    if jobs <= 1:
        for a in args:
            yield _cell(*a)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_cell, *a) for a in args]
        for f in futures:
            yield f.result()


def _write_metrics(out: OutputDir, rows: list[dict], cfg: ExperimentConfig) -> None:
    out.json("metrics.json", rows)
    out.text("metrics.csv", metrics_csv(rows, cfg.metrics))
    models = [m.name for m in cfg.models]
    for metric in cfg.metrics:
        out.text(f"grid_{metric}.csv", metrics_grid_csv(rows, metric, cfg.samplers, models))
    out.json("confusion.json", [
        {"sampler": r["sampler"], "model": r["model"], **{k: r[k] for k in ("tp", "fn", "fp", "tn")}}
        for r in rows
    ])


def select_instances(test: Dataset, positives: int, negatives: int, explicit=None) -> list[int]:
    if explicit:
        for i in explicit:
            if not 0 <= i < len(test):
                raise IndexError(f"instance {i} outside the {len(test)}-row evaluation set")
        return list(explicit)
    pos = np.flatnonzero(test.y == 1)[:positives]
    neg = np.flatnonzero(test.y == 0)[:negatives]
    return sorted(int(i) for i in np.concatenate([pos, neg]))


def explain_rows(model, data: Dataset, background: Dataset, rows: list[int], n_coalitions, seed: int):
    records, attributions = [], []
    for i in rows:
        a = kernel_shap(model, data.X[i], background, n_coalitions, derive_seed(seed, "instance", i))
        attributions.append(a)
        rec = force_record(a, data.feature_names, data.X[i])
        rec["row"] = int(i)
        rec["label"] = int(data.y[i])
        records.append(rec)
    return records, attributions


def _explain_stage(out: OutputDir, cfg: ExperimentConfig, model, train: Dataset, test: Dataset) -> None:
    sc = cfg.shap
    seed = derive_seed(cfg.seed, "shap")
    bg = background_sample(train, sc.background, seed)
    rows = select_instances(test, sc.positives, sc.negatives, sc.instances)
    records, attributions = explain_rows(model, test, bg, rows, sc.n_coalitions, seed)
    out.json("shap_force.json", {"model": sc.model, "sampler": sc.sampler, "records": records})
    if attributions:
        out.text("shap_global.csv", global_importance(attributions, test.feature_names).to_csv())


def _rules_stage(out: OutputDir, cfg: ExperimentConfig, train: Dataset, test: Dataset) -> None:
    rc = cfg.rules
    tree = fit_tree(train.X, train.y, make_params("dt", {"max_depth": rc.max_depth}), feature_names=train.feature_names)
    reference = train if rc.reference == "train" else test
    rules = extract_rules(tree, reference, 1, rc.min_support, rc.min_confidence)
    save_model(tree, out.path("rules_tree.json"), {"sampler": rc.sampler, "max_depth": rc.max_depth})
    out.text("rules.json", rules_json(rules) + "\n")
    out.text("rules.txt", rules_table(rules))
    out.text("importances.csv", gini_importances(tree).to_csv())

