"""Bagged random forest of Gini trees."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .common import canonical_order, check_features, check_xy
from .tree import GiniCriterion, TreeModel, grow


@dataclass
class ForestParams:
    n_trees: int = 100
    max_depth: int = 10
    features_per_split: int | None = None  # None -> floor(sqrt(D))
    bootstrap: bool = True
    min_samples_leaf: int = 1
    seed: int = 0


@dataclass(eq=False)
class ForestModel:
    trees: list[TreeModel]
    bootstrap_seeds: list[int]
    feature_names: tuple[str, ...]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict_proba(self, X) -> np.ndarray:
        X = check_features(X, self.n_features)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict_proba(X)
        return total / len(self.trees)


def tree_seeds(seed: int, n: int) -> list[int]:
    """Independent per-tree seeds; tree ``i`` sees the same seed regardless of ``n``."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def fit_forest(X, y, params: ForestParams | None = None, feature_names: Sequence[str] | None = None) -> ForestModel:
    """Each tree sees ``N`` rows drawn with replacement and a fresh random
    feature subset at every split."""
    params = params or ForestParams()
    if params.n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    X, y = check_xy(X, y)
    n, D = X.shape
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(D))
    m = params.features_per_split or max(1, int(math.isqrt(D)))
    m = min(m, D)
    stats = GiniCriterion.stats(y)
    crit = GiniCriterion()
    # content order, so the forest does not depend on how rows were shuffled
    canon = canonical_order(X, y)
    X, stats = X[canon], stats[canon]
    seeds = tree_seeds(params.seed, params.n_trees)
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        if params.bootstrap:
            idx = rng.integers(0, n, size=n)
            Xb, Sb = X[idx], stats[idx]
        else:
            Xb, Sb = X, stats
        trees.append(
            grow(Xb, Sb, crit, params.max_depth, params.min_samples_leaf,
                 max_features=m, rng=rng, feature_names=feature_names)
        )
    return ForestModel(trees, seeds, tuple(feature_names))
