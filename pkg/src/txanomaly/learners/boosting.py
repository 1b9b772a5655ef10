"""Stage-wise boosted trees for the logistic loss.

Two flavours share :class:`BoostedModel`:

``fit_gboost``
    classic gradient boosting: each stage is a squared-error regression tree
    fit to the residuals ``y - p`` whose leaves take one Newton step
    ``sum(y - p) / sum(p (1 - p))``.
``fit_xgb``
    regularized second-order boosting: splits maximise the gradient/hessian
    gain with L2 penalty ``reg_lambda`` and split cost ``gamma``; leaf weight
    is ``-G / (H + reg_lambda)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .common import (
    canonical_order,
    check_features,
    check_xy,
    log_loss,
    logistic_grad_hess,
    require_both_classes,
    sigmoid,
)
from .tree import SecondOrderCriterion, SquaredErrorCriterion, TreeModel, grow


@dataclass
class GBoostParams:
    n_stages: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_leaf: int = 1


@dataclass
class XGBParams:
    n_stages: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0


@dataclass(eq=False)
class BoostedModel:
    stages: list[TreeModel]
    learning_rate: float
    base_score: float
    feature_names: tuple[str, ...]
    kind: str = "gboost"
    train_loss: list[float] = field(default_factory=list, repr=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def decision_function(self, X) -> np.ndarray:
        X = check_features(X, self.n_features)
        total = np.zeros(X.shape[0])
        for stage in self.stages:
            total += stage.predict_value(X)
        return self.base_score + self.learning_rate * total

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))


def prior_log_odds(y) -> float:
    pi = float(np.mean(y))
    return math.log(pi / (1.0 - pi))


def _boost(X, y, n_stages, learning_rate, max_depth, make_stats, criterion, min_samples_leaf, feature_names, kind):
    X, y = check_xy(X, y)
    require_both_classes(y)
    if not 0.0 < learning_rate <= 1.0:
        raise ValueError("learning_rate must lie in (0, 1]")
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(X.shape[1]))
    canon = canonical_order(X, y)
    X, y = X[canon], y[canon]
    base = prior_log_odds(y)
    order = np.argsort(X, axis=0, kind="stable").T
    margin = np.full(X.shape[0], base)
    total = np.zeros(X.shape[0])
    stages = []
    history = [log_loss(y, sigmoid(margin))]
    for _ in range(n_stages):
        stats = make_stats(margin, y)
        tree = grow(X, stats, criterion, max_depth, min_samples_leaf, feature_names=feature_names, order=order)
        stages.append(tree)
        total += tree.value[tree.apply(X)]
        # same arithmetic as BoostedModel.decision_function
        margin = base + learning_rate * total
        history.append(log_loss(y, sigmoid(margin)))
    return BoostedModel(stages, learning_rate, base, tuple(feature_names), kind, history)


def _residual_stats(margin, y):
    g, h = logistic_grad_hess(margin, y)
    return np.column_stack([np.ones_like(g), -g, h])


def _gradient_stats(margin, y):
    g, h = logistic_grad_hess(margin, y)
    return np.column_stack([g, h])


def fit_gboost(X, y, params: GBoostParams | None = None, feature_names: Sequence[str] | None = None) -> BoostedModel:
    params = params or GBoostParams()
    return _boost(
        X, y, params.n_stages, params.learning_rate, params.max_depth,
        _residual_stats, SquaredErrorCriterion(), params.min_samples_leaf, feature_names, "gboost",
    )


def fit_xgb(X, y, params: XGBParams | None = None, feature_names: Sequence[str] | None = None) -> BoostedModel:
    params = params or XGBParams()
    crit = SecondOrderCriterion(params.reg_lambda, params.gamma, params.min_child_weight)
    return _boost(
        X, y, params.n_stages, params.learning_rate, params.max_depth,
        _gradient_stats, crit, 1, feature_names, "xgb",
    )
