"""Versioned JSON form of fitted models.

Layout (``format: "txanomaly-model"``, ``version: 1``)::

    {"format": ..., "version": 1, "kind": <kind>, "feature_names": [...], ...}

kinds and their payload:

``tree``      ``nodes`` (parallel arrays ``feature``, ``threshold``, ``left``,
              ``right``, ``n_samples``, ``value``, ``impurity``,
              ``class_counts``; child indices are explicit, ``-1`` for leaves),
              ``max_depth``, ``criterion``
``boosted``   ``stages`` (tree payloads), ``learning_rate``, ``base_score``,
              ``flavor`` (``gboost`` | ``xgb``)
``forest``    ``trees``, ``bootstrap_seeds``
``adaboost``  ``stumps`` (``{"tree", "alpha"}``)
``logistic``  ``weights``, ``bias``
``stacked``   ``bases`` (``{"name", "model"}``), ``meta``, ``fold_count``,
              ``fold_assignment``, ``meta_features``, ``seed``
``voting``    ``members`` (``{"name", "model"}``), ``mode``

Floats are written with Python's shortest round-trip repr, so a loaded model
predicts bit-identically. An optional ``metadata`` object carries params and
seeds for auditing.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .ensemble import StackedModel, VotingModel
from .learners import AdaBoostModel, BoostedModel, ForestModel, LogisticModel, TreeModel

FORMAT = "txanomaly-model"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _tree(m: TreeModel) -> dict:
    return {
        "nodes": {
            "feature": m.feature.tolist(),
            "threshold": m.threshold.tolist(),
            "left": m.left.tolist(),
            "right": m.right.tolist(),
            "n_samples": m.n_samples.tolist(),
            "value": m.value.tolist(),
            "impurity": m.impurity.tolist(),
            "class_counts": None if m.class_counts is None else m.class_counts.tolist(),
        },
        "max_depth": m.max_depth,
        "criterion": m.criterion,
    }


def _tree_back(d: dict, names) -> TreeModel:
    n = d["nodes"]
    return TreeModel(
        feature=np.array(n["feature"], dtype=np.intp),
        threshold=np.array(n["threshold"], dtype=np.float64),
        left=np.array(n["left"], dtype=np.intp),
        right=np.array(n["right"], dtype=np.intp),
        n_samples=np.array(n["n_samples"], dtype=np.intp),
        value=np.array(n["value"], dtype=np.float64),
        impurity=np.array(n["impurity"], dtype=np.float64),
        class_counts=None if n["class_counts"] is None else np.array(n["class_counts"], dtype=np.float64),
        max_depth=d["max_depth"],
        feature_names=tuple(names),
        criterion=d.get("criterion", "gini"),
    )


def _body(model) -> dict:
    if isinstance(model, TreeModel):
        return {"kind": "tree", **_tree(model)}
    if isinstance(model, BoostedModel):
        return {
            "kind": "boosted",
            "flavor": model.kind,
            "learning_rate": model.learning_rate,
            "base_score": model.base_score,
            "stages": [_tree(s) for s in model.stages],
        }
    if isinstance(model, ForestModel):
        return {"kind": "forest", "trees": [_tree(t) for t in model.trees], "bootstrap_seeds": list(model.bootstrap_seeds)}
    if isinstance(model, AdaBoostModel):
        return {"kind": "adaboost", "stumps": [{"tree": _tree(t), "alpha": a} for t, a in model.stumps]}
    if isinstance(model, LogisticModel):
        return {"kind": "logistic", "weights": model.weights.tolist(), "bias": model.bias}
    if isinstance(model, StackedModel):
        return {
            "kind": "stacked",
            "bases": [{"name": n, "model": to_dict(m)} for n, m in zip(model.base_names, model.base_models)],
            "meta": to_dict(model.meta),
            "fold_count": model.fold_count,
            "fold_assignment": model.fold_assignment.tolist(),
            "meta_features": model.meta_features.tolist(),
            "seed": model.seed,
        }
    if isinstance(model, VotingModel):
        return {
            "kind": "voting",
            "mode": model.mode,
            "members": [{"name": n, "model": to_dict(m)} for n, m in zip(model.names, model.members)],
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def to_dict(model, metadata: dict | None = None) -> dict:
    out = {"format": FORMAT, "version": VERSION, "feature_names": list(model.feature_names)}
    out.update(_body(model))
    if metadata:
        out["metadata"] = metadata
    return out


def from_dict(d: dict) -> Any:
    if d.get("format") != FORMAT:
        raise ModelFormatError("not a txanomaly model document")
    if d.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {d.get('version')!r}")
    names = tuple(d["feature_names"])
    kind = d.get("kind")
    if kind == "tree":
        return _tree_back(d, names)
    if kind == "boosted":
        return BoostedModel(
            [_tree_back(s, names) for s in d["stages"]], d["learning_rate"], d["base_score"], names, d["flavor"]
        )
    if kind == "forest":
        return ForestModel([_tree_back(t, names) for t in d["trees"]], list(d["bootstrap_seeds"]), names)
    if kind == "adaboost":
        return AdaBoostModel([(_tree_back(s["tree"], names), s["alpha"]) for s in d["stumps"]], names)
    if kind == "logistic":
        return LogisticModel(np.array(d["weights"], dtype=np.float64), d["bias"], names)
    if kind == "stacked":
        return StackedModel(
            [b["name"] for b in d["bases"]],
            [from_dict(b["model"]) for b in d["bases"]],
            from_dict(d["meta"]),
            d["fold_count"],
            np.array(d["fold_assignment"], dtype=np.intp),
            np.array(d["meta_features"], dtype=np.float64),
            names,
            d["seed"],
        )
    if kind == "voting":
        return VotingModel(
            [m["name"] for m in d["members"]], [from_dict(m["model"]) for m in d["members"]], d["mode"], names
        )
    raise ModelFormatError(f"unknown model kind {kind!r}")


def dumps(model, metadata: dict | None = None) -> str:
    return json.dumps(to_dict(model, metadata))


def loads(text: str):
    return from_dict(json.loads(text))


def save_model(model, path: str | Path, metadata: dict | None = None) -> None:
    Path(path).write_text(dumps(model, metadata))


def load_model(path: str | Path):
    return loads(Path(path).read_text())
