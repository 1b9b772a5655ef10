"""Two-class discrete AdaBoost (SAMME) over shallow Gini trees."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .common import check_features, check_xy, hard_labels, require_both_classes
from .tree import TreeModel, TreeParams, fit_tree


@dataclass
class AdaBoostParams:
    n_rounds: int = 50
    stump_depth: int = 1


@dataclass(eq=False)
class AdaBoostModel:
    stumps: list[tuple[TreeModel, float]]
    feature_names: tuple[str, ...]
    weight_sums: list[float] = field(default_factory=list, repr=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict_proba(self, X) -> np.ndarray:
        """alpha-weighted fraction of stumps voting for the positive class."""
        X = check_features(X, self.n_features)
        vote = np.zeros(X.shape[0])
        total = 0.0
        for stump, alpha in self.stumps:
            vote += alpha * hard_labels(stump.predict_proba(X))
            total += alpha
        return vote / total


def stage_weight(err: float) -> float:
    return math.log((1.0 - err) / err)


def fit_adaboost(X, y, params: AdaBoostParams | None = None, feature_names: Sequence[str] | None = None) -> AdaBoostModel:
    params = params or AdaBoostParams()
    X, y = check_xy(X, y)
    require_both_classes(y)
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(X.shape[1]))
    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    stumps: list[tuple[TreeModel, float]] = []
    sums = []
    stump_params = TreeParams(max_depth=params.stump_depth)
    for _ in range(params.n_rounds):
        stump = fit_tree(X, y, stump_params, sample_weight=w, feature_names=feature_names)
        miss = hard_labels(stump.predict_proba(X)) != y
        err = float(w[miss].sum())
        if err <= 0.0:
            # a perfect stump makes every earlier vote irrelevant
            stumps = [(stump, 1.0)]
            break
        if err >= 0.5:
            if not stumps:
                stumps.append((stump, 1.0))
            break
        alpha = stage_weight(err)
        stumps.append((stump, alpha))
        w = w * np.exp(alpha * miss)
        w = w / w.sum()
        sums.append(float(w.sum()))
    return AdaBoostModel(stumps, tuple(feature_names), sums)
