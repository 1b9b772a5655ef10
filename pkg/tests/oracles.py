"""Slow, obviously-correct reference implementations used as test oracles.

Everything here loops in plain Python over explicit definitions. None of it
imports the package under test beyond data containers.
"""

import itertools
import math

import numpy as np


def distance(a, b, metric="euclidean"):
    total = 0.0
    for u, v in zip(a, b):
        d = float(v) - float(u)
        total += d * d if metric == "euclidean" else abs(d)
    return total


def brute_knn(points, q, k, metric="euclidean", exclude=None):
    """Full sort by (distance, index)."""
    keyed = [(distance(q, p, metric), j) for j, p in enumerate(points) if j != exclude]
    keyed.sort()
    return [j for _, j in keyed[:k]]


def brute_enn_keep(X, y, k):
    keep = []
    for i in range(len(X)):
        nbrs = brute_knn(X, X[i], k, exclude=i)
        other = sum(1 for j in nbrs if y[j] != y[i])
        keep.append(not other > k / 2)
    return keep


def brute_tomek(X, y):
    """All cross-label pairs that are each other's nearest neighbour."""
    n = len(X)
    nearest = [brute_knn(X, X[i], 1, exclude=i)[0] for i in range(n)]
    return sorted(
        (a, b) for a in range(n) for b in range(a + 1, n)
        if y[a] != y[b] and nearest[a] == b and nearest[b] == a
    )


def _gini(c0, c1):
    n = c0 + c1
    p0, p1 = c0 / n, c1 / n
    return 1.0 - p0 * p0 - p1 * p1


def best_gini_split(X, y):
    """Exhaustive (feature, midpoint) search.

    Returns ``(feature, threshold, gain)`` of the first maximum in
    (feature, threshold) order, or ``None`` when no column varies.
    """
    n = len(y)
    c1 = float(sum(y))
    c0 = float(n) - c1
    parent = _gini(c0, c1)
    best = None
    for f in range(X.shape[1]):
        values = sorted(set(X[:, f].tolist()))
        for lo, hi in zip(values, values[1:]):
            t = (lo + hi) / 2.0
            if not lo <= t < hi:
                t = lo
            l0 = float(sum(1 for i in range(n) if X[i, f] <= t and y[i] == 0))
            l1 = float(sum(1 for i in range(n) if X[i, f] <= t and y[i] == 1))
            r0, r1 = c0 - l0, c1 - l1
            nl, nr = l0 + l1, r0 + r1
            gain = parent - (nl / n) * _gini(l0, l1) - (nr / n) * _gini(r0, r1)
            if best is None or gain > best[2]:
                best = (f, t, gain)
    return best


def mann_whitney_auc(y, s):
    """P(score_pos > score_neg) + 0.5 P(tie) over all pairs."""
    pos = [v for v, lab in zip(s, y) if lab == 1]
    neg = [v for v, lab in zip(s, y) if lab == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def exact_shapley(f, x, background):
    """Shapley values of the interventional game v(S) = mean_b f(x_S, b_notS)."""
    d = len(x)
    bg = np.asarray(background, dtype=np.float64)

    def value(S):
        rows = bg.copy()
        for j in S:
            rows[:, j] = x[j]
        return float(np.mean(f(rows)))

    cache = {}
    for r in range(d + 1):
        for S in itertools.combinations(range(d), r):
            cache[S] = value(S)
    phi = np.zeros(d)
    for j in range(d):
        others = [i for i in range(d) if i != j]
        for r in range(d):
            w = math.factorial(r) * math.factorial(d - r - 1) / math.factorial(d)
            for S in itertools.combinations(others, r):
                with_j = tuple(sorted(S + (j,)))
                phi[j] += w * (cache[with_j] - cache[S])
    return phi


def central_difference(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


def check_tree_against_oracle(fit_tree, TreeParams, X, y, max_depth=3):
    """Every internal node carries the exhaustive best split of the rows reaching it."""
    m = fit_tree(X, y, TreeParams(max_depth=max_depth))
    leaves = m.apply(X)
    depth = {0: 0}
    for node in m.nodes():
        reach = np.array([node.index in m.decision_path(x) for x in X])
        Xs, ys = X[reach], y[reach]
        best = best_gini_split(Xs, ys) if 0 < ys.sum() < ys.size else None
        if node.is_leaf:
            assert best is None or depth[node.index] >= max_depth
            assert np.all(leaves[reach] == node.index)
        else:
            depth[node.left] = depth[node.right] = depth[node.index] + 1
            assert best is not None
            assert (node.feature, node.threshold) == best[:2]
