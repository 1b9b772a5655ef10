"""From-scratch tree learners and the logistic meta-learner.

Every fitted model exposes ``predict_proba(X) -> ndarray`` of positive-class
probabilities and ``feature_names``; hard labels are ``1[p > THRESHOLD]``.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Mapping

from .adaboost import AdaBoostModel, AdaBoostParams, fit_adaboost
from .boosting import BoostedModel, GBoostParams, XGBParams, fit_gboost, fit_xgb
from .common import THRESHOLD, hard_labels, log_loss, logistic_grad_hess
from .forest import ForestModel, ForestParams, fit_forest
from .logistic import ConvergenceWarning, LogisticModel, LogisticParams, fit_logistic
from .tree import TreeModel, TreeNode, TreeParams, fit_tree, gini, predict_proba_tree, split_gain

# short kind name -> (params dataclass, fit function)
LEARNERS = {
    "dt": (TreeParams, fit_tree),
    "rf": (ForestParams, fit_forest),
    "gb": (GBoostParams, fit_gboost),
    "xgb": (XGBParams, fit_xgb),
    "adb": (AdaBoostParams, fit_adaboost),
    "lr": (LogisticParams, fit_logistic),
}


def make_params(kind: str, overrides: Mapping[str, Any] | None = None):
    """Default hyperparameters of ``kind`` updated with ``overrides``.

    Unknown keys raise ``ValueError`` rather than being ignored.
    """
    if kind not in LEARNERS:
        raise ValueError(f"unknown learner {kind!r}; expected one of {sorted(LEARNERS)}")
    cls = LEARNERS[kind][0]
    overrides = dict(overrides or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ValueError(f"unknown {kind} parameters {unknown}; expected a subset of {sorted(known)}")
    return cls(**overrides)


def fit_learner(kind: str, X, y, params=None, seed: int | None = None, feature_names=None):
    """Fit a learner by kind name. ``seed`` only affects randomized learners."""
    if params is None or isinstance(params, Mapping):
        params = make_params(kind, params)
    if seed is not None and hasattr(params, "seed"):
        params = dataclasses.replace(params, seed=seed)
    return LEARNERS[kind][1](X, y, params, feature_names=feature_names)


__all__ = [
    "AdaBoostModel", "AdaBoostParams", "BoostedModel", "ConvergenceWarning", "ForestModel",
    "ForestParams", "GBoostParams", "LEARNERS", "LogisticModel", "LogisticParams", "THRESHOLD",
    "TreeModel", "TreeNode", "TreeParams", "XGBParams", "fit_adaboost", "fit_forest", "fit_gboost",
    "fit_learner", "fit_logistic", "fit_tree", "fit_xgb", "gini", "hard_labels", "log_loss",
    "logistic_grad_hess", "make_params", "predict_proba_tree", "split_gain",
]
