"""Experiment configuration: JSON in, validated dataclasses out.

Unknown keys anywhere are errors. A minimal config::

    {
      "input": {"synthetic": {"n_major": 20000, "n_minor": 20, "separation": 3.0, "seed": 1}},
      "samplers": ["none", "xgbclus"],
      "models": ["dt", "rf"],
      "seed": 7
    }

Top-level keys
    ``input``          ``{"path": csv}`` or ``{"synthetic": {...}}``
    ``preprocess``     ``drop`` (list, default: outdegree and the label-leaking columns for 12-column
                       input), ``dedup`` (bool, true), ``keep_negatives``
                       (int or null), ``test_fraction`` (0.2),
                       ``p_threshold`` (0.01)
    ``samplers``       names from :data:`txanomaly.sampling.SAMPLERS`
    ``sampler_params`` per-sampler options, e.g. ``{"xgbclus": {"learner": {...}}}``
    ``paper_faithful`` bool; XGBCLUS scores candidates on the test split
    ``models``         kind names or objects ``{"name", "kind", "params"}``;
                       ``stacked`` takes ``bases``/``folds``/``meta_params``,
                       ``voting`` takes ``members``/``mode``
    ``metrics``        subset of accuracy, tpr, fpr, tnr, auc (all by default)
    ``shap``           ``enabled``, ``model``, ``sampler``, ``background``,
                       ``positives``, ``negatives``, ``instances``, ``n_coalitions``
    ``rules``          ``enabled``, ``sampler``, ``max_depth``, ``min_support``,
                       ``min_confidence``, ``reference`` (train | test)
    ``seed``           root seed (required)
    ``out_dir``        output directory (may be overridden on the command line)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .ensemble import STACK_BASES, VOTE_MEMBERS
from .learners import LEARNERS, make_params
from .sampling import SAMPLERS

METRIC_NAMES = ("accuracy", "tpr", "fpr", "tnr", "auc")
MODEL_KINDS = tuple(LEARNERS) + ("stacked", "voting")


class ConfigError(ValueError):
    pass


def _keys(d: Any, allowed: set[str], where: str, required: set[str] = frozenset()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    missing = sorted(required - set(d))
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")
    return d


@dataclass
class ModelSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)
    bases: list = field(default_factory=list)
    members: list = field(default_factory=list)
    folds: int = 10
    mode: str = "soft"
    meta_params: dict = field(default_factory=dict)


@dataclass
class ShapConfig:
    enabled: bool = False
    model: str | None = None
    sampler: str | None = None
    background: int = 100
    positives: int = 2
    negatives: int = 2
    instances: list[int] | None = None
    n_coalitions: int | None = None


@dataclass
class RulesConfig:
    enabled: bool = False
    sampler: str | None = None
    max_depth: int = 10
    min_support: int = 5
    min_confidence: float = 0.9
    reference: str = "train"


@dataclass
class ExperimentConfig:
    input: dict
    samplers: list[str]
    models: list[ModelSpec]
    seed: int
    preprocess: dict = field(default_factory=dict)
    sampler_params: dict = field(default_factory=dict)
    paper_faithful: bool = False
    metrics: list[str] = field(default_factory=lambda: list(METRIC_NAMES))
    shap: ShapConfig = field(default_factory=ShapConfig)
    rules: RulesConfig = field(default_factory=RulesConfig)
    out_dir: str | None = None
    raw: dict = field(default_factory=dict, repr=False)

    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _member_list(value, where: str) -> list:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a non-empty list")
    out = []
    for i, m in enumerate(value):
        if isinstance(m, str):
            m = {"name": m, "kind": m}
        _keys(m, {"name", "kind", "params"}, f"{where}[{i}]", {"kind"})
        if m["kind"] not in LEARNERS:
            raise ConfigError(f"{where}[{i}]: unknown learner kind {m['kind']!r}")
        try:
            make_params(m["kind"], m.get("params"))
        except ValueError as e:
            raise ConfigError(f"{where}[{i}]: {e}") from None
        out.append({"name": m.get("name", m["kind"]), "kind": m["kind"], "params": dict(m.get("params", {}))})
    return out


def _model(m, i: int) -> ModelSpec:
    where = f"models[{i}]"
    if isinstance(m, str):
        m = {"name": m, "kind": m}
    _keys(m, {"name", "kind", "params", "bases", "members", "folds", "mode", "meta_params"}, where, {"kind"})
    kind = m["kind"]
    if kind not in MODEL_KINDS:
        raise ConfigError(f"{where}: unknown model kind {kind!r}; expected one of {list(MODEL_KINDS)}")
    spec = ModelSpec(m.get("name", kind), kind)
    if kind == "stacked":
        spec.bases = _member_list(m.get("bases", list(STACK_BASES)), f"{where}.bases")
        spec.folds = int(m.get("folds", 10))
        if spec.folds < 2:
            raise ConfigError(f"{where}.folds must be at least 2")
        try:
            make_params("lr", m.get("meta_params"))
        except ValueError as e:
            raise ConfigError(f"{where}.meta_params: {e}") from None
        spec.meta_params = dict(m.get("meta_params", {}))
    elif kind == "voting":
        spec.members = _member_list(m.get("members", list(VOTE_MEMBERS)), f"{where}.members")
        if len(spec.members) < 2:
            raise ConfigError(f"{where}: voting needs at least two members")
        spec.mode = m.get("mode", "soft")
        if spec.mode not in ("hard", "soft"):
            raise ConfigError(f"{where}.mode must be 'hard' or 'soft'")
    else:
        for key in ("bases", "members", "folds", "mode", "meta_params"):
            if key in m:
                raise ConfigError(f"{where}: key {key!r} only applies to ensembles")
        try:
            make_params(kind, m.get("params"))
        except ValueError as e:
            raise ConfigError(f"{where}: {e}") from None
        spec.params = dict(m.get("params", {}))
    return spec


def parse_config(raw: dict) -> ExperimentConfig:
    _keys(
        raw,
        {"input", "preprocess", "samplers", "sampler_params", "paper_faithful", "models",
         "metrics", "shap", "rules", "seed", "out_dir"},
        "config",
        {"input", "models", "seed"},
    )
    inp = _keys(raw["input"], {"path", "synthetic"}, "input")
    if ("path" in inp) == ("synthetic" in inp):
        raise ConfigError("input: give exactly one of 'path' or 'synthetic'")
    if "synthetic" in inp:
        _keys(inp["synthetic"], {"n_major", "n_minor", "separation", "seed"}, "input.synthetic",
              {"n_major", "n_minor", "separation"})
    pre = _keys(raw.get("preprocess", {}), {"drop", "dedup", "keep_negatives", "test_fraction", "p_threshold"},
                "preprocess")
    tf = pre.get("test_fraction", 0.2)
    if not 0 < tf < 1:
        raise ConfigError("preprocess.test_fraction must lie in (0, 1)")

    samplers = raw.get("samplers", ["none"])
    if not isinstance(samplers, list) or not samplers:
        raise ConfigError("samplers: expected a non-empty list")
    for s in samplers:
        if s not in SAMPLERS:
            raise ConfigError(f"samplers: unknown sampler {s!r}; expected one of {list(SAMPLERS)}")
    if len(set(samplers)) != len(samplers):
        raise ConfigError("samplers: duplicate entries")
    sp = _keys(raw.get("sampler_params", {}), set(SAMPLERS), "sampler_params")
    for name, opts in sp.items():
        _keys(opts, {"k", "k_enn", "metric", "learner", "holdout_fraction", "tmax0", "fmin0"},
              f"sampler_params.{name}")
        if "learner" in opts:
            try:
                make_params("xgb", opts["learner"])
            except ValueError as e:
                raise ConfigError(f"sampler_params.{name}.learner: {e}") from None

    models_raw = raw["models"]
    if not isinstance(models_raw, list) or not models_raw:
        raise ConfigError("models: at least one learner is required")
    models = [_model(m, i) for i, m in enumerate(models_raw)]
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ConfigError(f"models: duplicate names {names}")

    metrics = raw.get("metrics", list(METRIC_NAMES))
    for m in metrics:
        if m not in METRIC_NAMES:
            raise ConfigError(f"metrics: unknown metric {m!r}")

    shap_raw = _keys(raw.get("shap", {}), set(ShapConfig.__dataclass_fields__), "shap")
    shap = ShapConfig(**shap_raw)
    if shap.enabled:
        shap.model = shap.model or names[0]
        shap.sampler = shap.sampler or samplers[0]
        if shap.model not in names:
            raise ConfigError(f"shap.model {shap.model!r} is not a configured model")
        if shap.sampler not in samplers:
            raise ConfigError(f"shap.sampler {shap.sampler!r} is not a configured sampler")
    rules_raw = _keys(raw.get("rules", {}), set(RulesConfig.__dataclass_fields__), "rules")
    rules = RulesConfig(**rules_raw)
    if rules.enabled:
        rules.sampler = rules.sampler or samplers[0]
        if rules.sampler not in samplers:
            raise ConfigError(f"rules.sampler {rules.sampler!r} is not a configured sampler")
        if rules.reference not in ("train", "test"):
            raise ConfigError("rules.reference must be 'train' or 'test'")

    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    return ExperimentConfig(
        input=inp, samplers=list(samplers), models=models, seed=seed, preprocess=dict(pre),
        sampler_params=dict(sp), paper_faithful=bool(raw.get("paper_faithful", False)),
        metrics=list(metrics), shap=shap, rules=rules, out_dir=raw.get("out_dir"), raw=raw,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    return parse_config(raw)
