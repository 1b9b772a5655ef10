"""Axis-aligned binary trees and the exact greedy split search.

One growth routine serves every tree-based learner. A *criterion* decides
which per-row statistics are summed, how a candidate split is scored and
what a leaf stores:

* :class:`GiniCriterion` -- classification trees (optionally sample weighted)
* :class:`SquaredErrorCriterion` -- gradient boosting stages
* :class:`SecondOrderCriterion` -- regularized second-order boosting stages

Candidate thresholds are midpoints between consecutive distinct values of a
feature. Rows with ``x <= threshold`` go left. Among equally good candidates
the lower feature index wins, then the lower threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .common import check_xy

# Gini decreases are compared with this slack so that mathematically
# zero-gain splits are not rejected on rounding noise.
_GAIN_SLACK = 1e-12


def gini(class_counts) -> float:
    """Gini impurity ``1 - sum p_c^2`` of a pair of (possibly weighted) counts."""
    c0, c1 = float(class_counts[0]), float(class_counts[1])
    if c0 < 0 or c1 < 0:
        raise ValueError("class counts must be nonnegative")
    n = c0 + c1
    if n == 0:
        raise ValueError("gini of an empty node is undefined")
    p0 = c0 / n
    p1 = c1 / n
    return 1.0 - p0 * p0 - p1 * p1


def gini_decrease(parent, left, right) -> float:
    """Impurity decrease of one split, children weighted by their share."""
    n = float(parent[0]) + float(parent[1])
    nl = float(left[0]) + float(left[1])
    nr = float(right[0]) + float(right[1])
    return gini(parent) - (nl / n) * gini(left) - (nr / n) * gini(right)


class GiniCriterion:
    """Statistics are the (weighted) counts of class 0 and class 1."""

    kind = "gini"

    @staticmethod
    def stats(y: np.ndarray, sample_weight: np.ndarray | None = None) -> np.ndarray:
        w = np.ones(y.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        out = np.empty((y.shape[0], 2))
        out[:, 0] = w * (y == 0)
        out[:, 1] = w * (y == 1)
        return out

    def __init__(self, min_impurity_decrease: float = 0.0):
        self.min_impurity_decrease = min_impurity_decrease

    def gain(self, L: np.ndarray, R: np.ndarray, P: np.ndarray) -> np.ndarray:
        # same operation order as gini()/gini_decrease() so results are bitwise equal
        n = P[0] + P[1]
        nl = L[..., 0] + L[..., 1]
        nr = R[..., 0] + R[..., 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            pl0, pl1 = L[..., 0] / nl, L[..., 1] / nl
            pr0, pr1 = R[..., 0] / nr, R[..., 1] / nr
            gl = 1.0 - pl0 * pl0 - pl1 * pl1
            gr = 1.0 - pr0 * pr0 - pr1 * pr1
        return self.impurity(P) - (nl / n) * gl - (nr / n) * gr

    def valid(self, L: np.ndarray, R: np.ndarray):
        return (L[..., 0] + L[..., 1] > 0) & (R[..., 0] + R[..., 1] > 0)

    def accept(self, gain: float) -> bool:
        return gain >= self.min_impurity_decrease - _GAIN_SLACK

    def is_pure(self, P: np.ndarray) -> bool:
        return P[0] <= 0 or P[1] <= 0

    def impurity(self, P: np.ndarray) -> float:
        return gini(P)

    def leaf_value(self, P: np.ndarray) -> float:
        return float(P[1] / (P[0] + P[1]))


class SquaredErrorCriterion:
    """Regression on residuals ``r = y - p`` with a Newton leaf value.

    Statistics are ``[1, r, h]`` with ``h = p (1 - p)``. The split score is the
    squared-error reduction; the leaf stores ``sum r / sum h``.
    """

    kind = "squared_error"

    def gain(self, L, R, P):
        with np.errstate(invalid="ignore", divide="ignore"):
            return L[..., 1] ** 2 / L[..., 0] + R[..., 1] ** 2 / R[..., 0] - P[1] ** 2 / P[0]

    def valid(self, L, R):
        return None

    def accept(self, gain: float) -> bool:
        return gain > 0.0

    def is_pure(self, P) -> bool:
        return False

    def impurity(self, P) -> float:
        return 0.0

    def leaf_value(self, P) -> float:
        if abs(P[2]) < 1e-150:
            return 0.0
        return float(P[1] / P[2])


class SecondOrderCriterion:
    """Gradient/hessian statistics ``[g, h]`` with L2 leaf regularization.

    Split gain is ``(G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)) / 2 - gamma``
    and leaf weight ``-G / (H + lam)``. Splits with gain <= 0 are not made.
    """

    kind = "second_order"

    def __init__(self, reg_lambda: float = 1.0, gamma: float = 0.0, min_child_weight: float = 1.0):
        self.reg_lambda = reg_lambda
        self.gamma = gamma
        self.min_child_weight = min_child_weight

    def gain(self, L, R, P):
        return split_gain(L[..., 0], L[..., 1], R[..., 0], R[..., 1], self.reg_lambda, self.gamma)

    def valid(self, L, R):
        return (L[..., 1] >= self.min_child_weight) & (R[..., 1] >= self.min_child_weight)

    def accept(self, gain: float) -> bool:
        return gain > 0.0

    def is_pure(self, P) -> bool:
        return False

    def impurity(self, P) -> float:
        return 0.0

    def leaf_value(self, P) -> float:
        if np.isinf(self.reg_lambda):
            return 0.0
        return float(-P[0] / (P[1] + self.reg_lambda))


def split_gain(g_left, h_left, g_right, h_right, reg_lambda: float = 1.0, gamma: float = 0.0):
    """Second-order split gain; works on scalars and arrays."""
    g = g_left + g_right
    h = h_left + h_right
    return 0.5 * (
        g_left * g_left / (h_left + reg_lambda)
        + g_right * g_right / (h_right + reg_lambda)
        - g * g / (h + reg_lambda)
    ) - gamma


@dataclass(frozen=True, eq=False)
class TreeNode:
    """Read-only view of one node of a :class:`TreeModel`."""

    index: int
    feature: int  # -1 for leaves
    threshold: float
    left: int
    right: int
    n_samples: int
    class_counts: tuple[float, float] | None
    impurity: float
    value: float

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass(eq=False)
class TreeModel:
    """Fitted tree stored as flat node arrays in preorder (root = 0).

    For classification trees ``value`` holds the positive-class fraction of
    each node; for boosting stages it holds the additive leaf output.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_samples: np.ndarray
    value: np.ndarray
    impurity: np.ndarray
    class_counts: np.ndarray | None
    max_depth: int
    feature_names: tuple[str, ...]
    criterion: str = "gini"

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def node(self, i: int) -> TreeNode:
        counts = None if self.class_counts is None else tuple(float(c) for c in self.class_counts[i])
        return TreeNode(
            i,
            int(self.feature[i]),
            float(self.threshold[i]),
            int(self.left[i]),
            int(self.right[i]),
            int(self.n_samples[i]),
            counts,
            float(self.impurity[i]),
            float(self.value[i]),
        )

    def nodes(self) -> list[TreeNode]:
        return [self.node(i) for i in range(self.n_nodes)]

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.intp)
        for i in range(self.n_nodes):  # preorder: parents precede children
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row."""
        X = self._check(X)
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            n = node[active]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict_value(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def predict_proba(self, X) -> np.ndarray:
        """Positive-class probability of each row (classification trees)."""
        return self.predict_value(X)

    def decision_path(self, x) -> list[int]:
        x = self._check(x)[0]
        path = [0]
        i = 0
        while self.feature[i] >= 0:
            i = int(self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i])
            path.append(i)
        return path


def grow(
    X: np.ndarray,
    stats: np.ndarray,
    criterion,
    max_depth: int,
    min_samples_leaf: int = 1,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
    feature_names: Sequence[str] | None = None,
    order: np.ndarray | None = None,
) -> TreeModel:
    """Grow one tree by exact greedy search.

    Parameters
    ----------
    X : ndarray (n, D)
    stats : ndarray (n, k)
        Per-row additive statistics understood by ``criterion``.
    max_features : int, optional
        Number of features drawn uniformly without replacement at each split
        (random forests). ``None`` evaluates every feature.
    order : ndarray (D, n), optional
        Precomputed per-feature stable argsort of ``X``; reused across
        boosting stages.
    """
    X = np.asarray(X, dtype=np.float64)
    n, D = X.shape
    if n == 0:
        raise ValueError("cannot fit a tree on an empty dataset")
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(D))
    if order is None:
        order = np.argsort(X, axis=0, kind="stable").T
    order = np.ascontiguousarray(order)
    if max_features is not None and not 1 <= max_features <= D:
        raise ValueError("max_features must lie in [1, n_features]")
    classification = isinstance(criterion, GiniCriterion)

    feat, thr, lft, rgt, nsm, val, imp, cnt = [], [], [], [], [], [], [], []
    go_left = np.zeros(n, dtype=bool)

    def new_node(P, m):
        feat.append(-1)
        thr.append(0.0)
        lft.append(-1)
        rgt.append(-1)
        nsm.append(m)
        val.append(criterion.leaf_value(P))
        imp.append(criterion.impurity(P))
        cnt.append((float(P[0]), float(P[1])) if classification else None)
        return len(feat) - 1

    # explicit stack keeps preorder numbering: (sorted index block, depth, parent, is_left)
    stack = [(order, 0, -1, False)]
    while stack:
        block, depth, parent, is_left = stack.pop()
        m = block.shape[1]
        rows = block[0]
        P = stats[rows].sum(axis=0)
        node = new_node(P, m)
        if parent >= 0:
            if is_left:
                lft[parent] = node
            else:
                rgt[parent] = node
        if depth >= max_depth or m < 2 * min_samples_leaf or m < 2 or criterion.is_pure(P):
            continue

        if max_features is None or max_features == D:
            feats = np.arange(D)
        else:
            feats = np.sort(rng.choice(D, size=max_features, replace=False))
        idx = block[feats]
        xs = X[idx, feats[:, None]]
        cs = np.cumsum(stats[idx], axis=1)
        L = cs[:, :-1]
        R = P - L
        valid = xs[:, :-1] < xs[:, 1:]
        pos = np.arange(1, m)  # rows on the left of candidate i
        valid &= (pos >= min_samples_leaf) & (m - pos >= min_samples_leaf)
        extra = criterion.valid(L, R)
        if extra is not None:
            valid &= extra
        if not valid.any():
            continue
        gain = criterion.gain(L, R, P)
        gain = np.where(valid, gain, -np.inf)
        best = int(np.argmax(gain))  # first maximum: lowest feature, then lowest threshold
        fi, ci = divmod(best, m - 1)
        if not criterion.accept(float(gain[fi, ci])):
            continue
        f = int(feats[fi])
        lo, hi = xs[fi, ci], xs[fi, ci + 1]
        t = (lo + hi) / 2.0
        if not lo <= t < hi:  # adjacent floats
            t = lo
        feat[node] = f
        thr[node] = float(t)

        go_left[rows] = X[rows, f] <= t
        sel = go_left[block]
        n_left = int(sel[0].sum())
        left_block = block[sel].reshape(D, n_left)
        right_block = block[~sel].reshape(D, m - n_left)
        go_left[rows] = False
        stack.append((right_block, depth + 1, node, False))
        stack.append((left_block, depth + 1, node, True))

    counts = np.array(cnt, dtype=np.float64) if classification else None
    return TreeModel(
        feature=np.array(feat, dtype=np.intp),
        threshold=np.array(thr, dtype=np.float64),
        left=np.array(lft, dtype=np.intp),
        right=np.array(rgt, dtype=np.intp),
        n_samples=np.array(nsm, dtype=np.intp),
        value=np.array(val, dtype=np.float64),
        impurity=np.array(imp, dtype=np.float64),
        class_counts=counts,
        max_depth=max_depth,
        feature_names=tuple(feature_names),
        criterion=criterion.kind,
    )


@dataclass
class TreeParams:
    max_depth: int = 10
    min_samples_leaf: int = 1
    min_impurity_decrease: float = 0.0


def fit_tree(
    X,
    y,
    params: TreeParams | None = None,
    sample_weight=None,
    feature_names: Sequence[str] | None = None,
) -> TreeModel:
    """CART classification tree with Gini impurity."""
    params = params or TreeParams()
    X, y = check_xy(X, y)
    if X.shape[0] < 2 * params.min_samples_leaf:
        raise ValueError("not enough rows for min_samples_leaf")
    crit = GiniCriterion(params.min_impurity_decrease)
    return grow(
        X,
        GiniCriterion.stats(y, sample_weight),
        crit,
        params.max_depth,
        params.min_samples_leaf,
        feature_names=feature_names,
    )


def predict_proba_tree(model: TreeModel, x) -> np.ndarray | float:
    """Positive-class leaf fraction; a single vector gives a float."""
    x = np.asarray(x, dtype=np.float64)
    p = model.predict_proba(x)
    return float(p[0]) if x.ndim == 1 else p
