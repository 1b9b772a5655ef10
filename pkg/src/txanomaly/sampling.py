"""Class-balance strategies and the exact nearest-neighbour kernel.

Under-samplers: :func:`random_undersample`, :func:`near_miss_1`, :func:`xgbclus`.
Over-samplers: :func:`smote`, :func:`adasyn`.
Cleaners: :func:`enn_clean`, :func:`tomek_remove`; combined: :func:`smote_enn`,
:func:`smote_tomek`.

Distances are computed coordinate by coordinate (``sum (x_j - q_j)^2`` in
feature order), so two equal distances are bitwise equal and ties are always
resolved by the lower row index.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np

from .dataset import Dataset, stratified_split
from .learners import XGBParams, fit_xgb, hard_labels

METRICS = ("euclidean", "manhattan")

# bound on query_rows * index_rows per distance block
_BLOCK = 1 << 22


class SamplingError(ValueError):
    """Sampler precondition violated."""


class XgbclusSelectionError(SamplingError):
    """No candidate subset beat the initial thresholds; rerun with new ones."""

    def __init__(self, message: str, trace: "XgbclusTrace"):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------- kNN


class NeighborIndex:
    """Brute-force exact k-nearest-neighbour index over a fixed point set."""

    def __init__(self, points, metric: str = "euclidean"):
        if metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-D array")
        self.points = pts
        self.metric = metric

    def __len__(self) -> int:
        return self.points.shape[0]

    def distances(self, Q: np.ndarray) -> np.ndarray:
        """``(len(Q), N)`` matrix of squared-euclidean or manhattan distances."""
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        out = np.zeros((Q.shape[0], len(self)))
        for j in range(self.points.shape[1]):
            diff = self.points[None, :, j] - Q[:, j, None]
            if self.metric == "euclidean":
                out += diff * diff
            else:
                out += np.abs(diff)
        return out

    def query(self, q, k: int, exclude: int | None = None) -> np.ndarray:
        """Indices of the ``k`` nearest points, nearest first."""
        return self.query_batch(np.atleast_2d(q), k, None if exclude is None else [exclude])[0]

    def query_batch(self, Q, k: int, exclude=None) -> np.ndarray:
        """Row ``i`` holds the ``k`` nearest indices for ``Q[i]``.

        ``exclude[i]`` (if given and >= 0) is never returned for query ``i``;
        use it to skip the query point itself.
        """
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        n = len(self)
        avail = n if exclude is None else n - 1
        if k > avail or k < 0:
            raise ValueError(f"k={k} exceeds the {avail} available points")
        out = np.empty((Q.shape[0], k), dtype=np.intp)
        if k == 0:
            return out
        step = max(1, _BLOCK // max(n, 1))
        for s in range(0, Q.shape[0], step):
            dist = self.distances(Q[s:s + step])
            if exclude is not None:
                ex = np.asarray(exclude[s:s + step], dtype=np.intp)
                hit = ex >= 0
                dist[np.flatnonzero(hit), ex[hit]] = np.inf
            for r, row in enumerate(dist):
                out[s + r] = _smallest(row, k)
        return out


def _smallest(row: np.ndarray, k: int) -> np.ndarray:
    # every point tied with the k-th distance is a candidate; order by (distance, index)
    if k < row.size:
        kth = np.partition(row, k - 1)[k - 1]
        cand = np.flatnonzero(row <= kth)
    else:
        cand = np.arange(row.size)
    order = np.lexsort((cand, row[cand]))
    return cand[order[:k]]


def knn(index: NeighborIndex, query, k: int) -> np.ndarray:
    return index.query(query, k)


# ----------------------------------------------------------------- reports


@dataclass
class BalanceReport:
    """Minority/majority counts after resampling.

    ``ratio`` is minority over majority of the output: the under-sampling
    balance ratio and the over-sampling imbalance ratio coincide on it.
    """

    sampler: str
    mode: str  # "under" | "over" | "clean" | "none"
    ratio: float
    n_minority: int
    n_majority_after: int
    n_rows_before: int
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def balance_report(sampler: str, mode: str, before: Dataset, after: Dataset, notes=None) -> BalanceReport:
    n_min = after.n_positive
    n_maj = after.n_negative
    return BalanceReport(
        sampler,
        mode,
        n_min / n_maj if n_maj else math.inf,
        n_min,
        n_maj,
        len(before),
        list(notes or []),
    )


def _need_positives(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    pos = np.flatnonzero(d.y == 1)
    neg = np.flatnonzero(d.y == 0)
    if pos.size == 0:
        raise SamplingError("training data has no anomalous rows")
    return pos, neg


# ----------------------------------------------------------- under-sampling


def random_undersample(train: Dataset, seed: int = 0) -> Dataset:
    """All anomalous rows plus an equally sized uniform subset of normal rows."""
    pos, neg = _need_positives(train)
    rng = np.random.default_rng(seed)
    n = min(pos.size, neg.size)
    chosen = rng.choice(neg, size=n, replace=False)
    return train.subset(np.sort(np.concatenate([pos, chosen])))


def near_miss_1(train: Dataset, metric: str = "euclidean") -> Dataset:
    """Keep, for every anomalous row, its single nearest normal row.

    Normal rows claimed by several anomalous rows are kept once; the shortfall
    is filled with the unclaimed normal rows closest to any anomalous row, so
    both classes end with the same count.
    """
    pos, neg = _need_positives(train)
    if neg.size == 0:
        raise SamplingError("training data has no normal rows")
    index = NeighborIndex(train.X[neg], metric)
    nearest = index.query_batch(train.X[pos], 1)[:, 0]
    marked = np.unique(nearest)
    target = min(pos.size, neg.size)
    if marked.size < target:
        # distance from each normal row to its closest anomalous row
        closest = np.full(neg.size, np.inf)
        step = max(1, _BLOCK // max(neg.size, 1))
        for s in range(0, pos.size, step):
            closest = np.minimum(closest, index.distances(train.X[pos[s:s + step]]).min(axis=0))
        free = np.setdiff1d(np.arange(neg.size), marked)
        fill = free[np.lexsort((free, closest[free]))][: target - marked.size]
        marked = np.concatenate([marked, fill])
    return train.subset(np.sort(np.concatenate([pos, neg[marked]])))


@dataclass
class XgbclusStep:
    iteration: int
    tp: int
    fp: int
    accepted: bool


@dataclass
class XgbclusTrace:
    iterations: list[XgbclusStep]
    tmax_final: float
    fmin_final: float
    selected_index: list[int]  # rows of the training set kept as normals
    n_positive: int
    learner: dict[str, Any]

    def accepted(self) -> list[XgbclusStep]:
        return [s for s in self.iterations if s.accepted]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for key in ("tmax_final", "fmin_final"):
            v = d[key]
            d[key] = v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# XGBCLUS refits the booster once per iteration, so its default is lighter
# than the stand-alone classifier's 100 stages.
XGBCLUS_LEARNER = XGBParams(n_stages=20, learning_rate=0.3, max_depth=3)


def confusion_counts(y_true: np.ndarray, y_pred: np.ndarray) -> tuple[int, int]:
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    return tp, fp


def xgbclus_candidate(train: Dataset, negatives, selector_eval: Dataset, learner: XGBParams) -> tuple[int, int]:
    """Fit on all anomalous rows plus ``negatives`` and score the evaluation set."""
    pos = np.flatnonzero(train.y == 1)
    idx = np.sort(np.concatenate([pos, np.asarray(negatives, dtype=np.intp)]))
    model = fit_xgb(train.X[idx], train.y[idx], learner, feature_names=train.feature_names)
    return confusion_counts(selector_eval.y, hard_labels(model.predict_proba(selector_eval.X)))


def xgbclus(
    train: Dataset,
    selector_eval: Dataset,
    learner_cfg: XGBParams | None = None,
    tmax0: float = -1,
    fmin0: float = math.inf,
    seed: int = 0,
) -> tuple[Dataset, XgbclusTrace]:
    """Boosting-guided random under-sampling.

    With ``P`` anomalous training rows the search runs
    ``k = floor(n_normal / P)`` iterations. Each iteration draws ``P`` normal
    rows uniformly without replacement (draws are independent across
    iterations), trains the booster on them plus every anomalous row, and
    counts true and false positives on ``selector_eval``. A draw is kept when
    it raises TP above the best so far *and* lowers FP below the best so far.

    Returns every anomalous row plus the last kept draw, and the full trace.
    Raises :class:`XgbclusSelectionError` when no draw beats ``(tmax0, fmin0)``.
    """
    learner = learner_cfg or XGBCLUS_LEARNER
    pos, neg = _need_positives(train)
    if selector_eval.n_positive == 0 or selector_eval.n_negative == 0:
        raise SamplingError("selector evaluation set needs rows of both classes")
    P = pos.size
    k = neg.size // P
    rng = np.random.default_rng(seed)
    tmax, fmin = tmax0, fmin0
    selected: np.ndarray | None = None
    steps = []
    for i in range(k):
        draw = np.sort(rng.choice(neg, size=P, replace=False))
        tp, fp = xgbclus_candidate(train, draw, selector_eval, learner)
        ok = tp > tmax and fp < fmin
        if ok:
            tmax, fmin = tp, fp
            selected = draw
        steps.append(XgbclusStep(i, tp, fp, ok))
    trace = XgbclusTrace(
        steps, tmax, fmin,
        [] if selected is None else selected.tolist(),
        int(P), asdict(learner),
    )
    if selected is None:
        raise XgbclusSelectionError(
            f"no draw beat TMAX={tmax0}, FMIN={fmin0} in {k} iterations; rerun with new thresholds",
            trace,
        )
    return train.subset(np.sort(np.concatenate([pos, selected]))), trace


def xgbclus_with_holdout(
    train: Dataset,
    learner_cfg: XGBParams | None = None,
    holdout_fraction: float = 0.2,
    tmax0: float = -1,
    fmin0: float = math.inf,
    seed: int = 0,
) -> tuple[Dataset, XgbclusTrace]:
    """Run :func:`xgbclus` with a stratified slice of ``train`` as the selector set.

    The slice is excluded from the search pool, so no selector row can end
    up in the returned sample.
    """
    seeds = np.random.SeedSequence(seed).spawn(2)
    split = stratified_split(train, holdout_fraction, int(seeds[0].generate_state(1)[0]))
    return xgbclus(split.train, split.test, learner_cfg, tmax0, fmin0, int(seeds[1].generate_state(1)[0]))


# ------------------------------------------------------------ over-sampling


@dataclass
class SyntheticRows:
    """Interpolated rows with their provenance (indices into the minority block)."""

    rows: np.ndarray
    parent: np.ndarray
    neighbor: np.ndarray
    lam: np.ndarray


def interpolate(x_i, x_z, lam):
    """``x_i + lam * (x_z - x_i)``."""
    return x_i + lam * (x_z - x_i)


def _minority_neighbors(Xm: np.ndarray, k: int, metric: str) -> np.ndarray:
    index = NeighborIndex(Xm, metric)
    return index.query_batch(Xm, k, exclude=np.arange(Xm.shape[0]))


def _generate(Xm: np.ndarray, parents: np.ndarray, nbrs: np.ndarray, rng: np.random.Generator) -> SyntheticRows:
    # one neighbour choice and one lambda per synthetic row, in generation order
    n = parents.size
    neighbor = np.empty(n, dtype=np.intp)
    lam = np.empty(n)
    for s, i in enumerate(parents):
        neighbor[s] = nbrs[i, rng.integers(nbrs.shape[1])]
        lam[s] = rng.random()
    rows = interpolate(Xm[parents], Xm[neighbor], lam[:, None])
    return SyntheticRows(rows.reshape(n, Xm.shape[1]), parents, neighbor, lam)


def smote_samples(train: Dataset, k: int = 5, seed: int = 0, metric: str = "euclidean") -> SyntheticRows:
    """Synthetic anomalous rows that equalise the class counts.

    Parents cycle round-robin over the anomalous rows in row order.
    """
    pos, neg = _need_positives(train)
    if pos.size < 2:
        raise SamplingError("SMOTE needs at least two anomalous rows")
    if not 1 <= k <= pos.size - 1:
        raise SamplingError(f"k={k} must lie in [1, {pos.size - 1}]")
    Xm = train.X[pos]
    G = max(neg.size - pos.size, 0)
    nbrs = _minority_neighbors(Xm, k, metric)
    parents = np.arange(G) % pos.size
    return _generate(Xm, parents, nbrs, np.random.default_rng(seed))


def _append_synthetic(train: Dataset, syn: SyntheticRows) -> Dataset:
    if syn.rows.shape[0] == 0:
        return train
    extra = Dataset(train.feature_names, syn.rows, np.ones(syn.rows.shape[0], dtype=np.int8), train.label_name)
    return Dataset.concat([train, extra])


def smote(train: Dataset, k: int = 5, seed: int = 0, metric: str = "euclidean") -> Dataset:
    return _append_synthetic(train, smote_samples(train, k, seed, metric))


def largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``shares`` summing exactly to ``total``.

    Floors first, then hands the leftover units to the largest fractional
    parts (lower index first on ties).
    """
    shares = np.asarray(shares, dtype=np.float64)
    raw = shares / shares.sum() * total
    base = np.floor(raw).astype(np.int64)
    left = int(total - base.sum())
    if left > 0:
        frac = raw - base
        order = np.lexsort((np.arange(frac.size), -frac))
        base[order[:left]] += 1
    return base


@dataclass
class AdasynPlan:
    difficulty: np.ndarray  # fraction of normal rows among each anomalous row's k neighbours
    allocation: np.ndarray  # synthetic rows per anomalous row
    uniform_fallback: bool


def adasyn_plan(train: Dataset, k: int = 5, metric: str = "euclidean") -> AdasynPlan:
    pos, neg = _need_positives(train)
    if pos.size < 2:
        raise SamplingError("ADASYN needs at least two anomalous rows")
    G = max(neg.size - pos.size, 0)
    kk = min(k, len(train) - 1)
    index = NeighborIndex(train.X, metric)
    nbrs = index.query_batch(train.X[pos], kk, exclude=pos)
    r = (train.y[nbrs] == 0).sum(axis=1) / kk
    fallback = bool(r.sum() == 0)
    shares = np.ones(pos.size) if fallback else r
    return AdasynPlan(r, largest_remainder(shares, G), fallback)


def adasyn_samples(train: Dataset, k: int = 5, seed: int = 0, metric: str = "euclidean") -> tuple[SyntheticRows, AdasynPlan]:
    plan = adasyn_plan(train, k, metric)
    pos = np.flatnonzero(train.y == 1)
    Xm = train.X[pos]
    km = min(k, pos.size - 1)
    nbrs = _minority_neighbors(Xm, km, metric)
    parents = np.repeat(np.arange(pos.size), plan.allocation)
    return _generate(Xm, parents, nbrs, np.random.default_rng(seed)), plan


def adasyn(train: Dataset, k: int = 5, seed: int = 0, metric: str = "euclidean") -> Dataset:
    """Over-sample with more synthetic rows around anomalous rows whose
    neighbourhood is dominated by normal rows."""
    syn, _ = adasyn_samples(train, k, seed, metric)
    return _append_synthetic(train, syn)


# ----------------------------------------------------------------- cleaning


def enn_mask(d: Dataset, k: int = 3, metric: str = "euclidean") -> np.ndarray:
    """True for rows the edited-nearest-neighbour rule keeps.

    A row is dropped when strictly more than half of its ``k`` nearest other
    rows carry the other label. Every vote uses the original data.
    """
    if len(d) <= k:
        raise SamplingError(f"ENN needs more than k={k} rows")
    index = NeighborIndex(d.X, metric)
    nbrs = index.query_batch(d.X, k, exclude=np.arange(len(d)))
    other = (d.y[nbrs] != d.y[:, None]).sum(axis=1)
    return ~(2 * other > k)


def enn_clean(d: Dataset, k: int = 3, metric: str = "euclidean") -> Dataset:
    return d.subset(np.flatnonzero(enn_mask(d, k, metric)))


def majority_label(d: Dataset) -> int:
    """The more frequent label; a tie counts label 0 (normal) as majority."""
    return 1 if d.n_positive > d.n_negative else 0


def tomek_links(d: Dataset, metric: str = "euclidean") -> list[tuple[int, int]]:
    """Cross-label pairs that are each other's nearest neighbour, as (lower, higher) row indices."""
    if len(d) < 2:
        return []
    index = NeighborIndex(d.X, metric)
    nn = index.query_batch(d.X, 1, exclude=np.arange(len(d)))[:, 0]
    links = []
    for a, b in enumerate(nn):
        if a < b and nn[b] == a and d.y[a] != d.y[b]:
            links.append((a, int(b)))
    return links


def tomek_remove(d: Dataset, metric: str = "euclidean") -> Dataset:
    """Drop the majority-label member of every Tomek link."""
    links = tomek_links(d, metric)
    if not links:
        return d
    maj = majority_label(d)
    drop = {a if d.y[a] == maj else b for a, b in links}
    keep = np.array([i for i in range(len(d)) if i not in drop], dtype=np.intp)
    return d.subset(keep)


def smote_enn(train: Dataset, k_smote: int = 5, k_enn: int = 3, seed: int = 0) -> Dataset:
    return enn_clean(smote(train, k_smote, seed), k_enn)


def smote_tomek(train: Dataset, k_smote: int = 5, seed: int = 0) -> Dataset:
    return tomek_remove(smote(train, k_smote, seed))


# ------------------------------------------------------------------ registry

SAMPLERS = ("none", "rus", "nearmiss1", "xgbclus", "smote", "adasyn", "smoteenn", "smotetomek")
SAMPLER_MODE = {
    "none": "none", "rus": "under", "nearmiss1": "under", "xgbclus": "under",
    "smote": "over", "adasyn": "over", "smoteenn": "over", "smotetomek": "over",
}


@dataclass
class SampleOutcome:
    data: Dataset
    report: BalanceReport
    trace: XgbclusTrace | None = None


def run_sampler(
    name: str,
    train: Dataset,
    seed: int,
    params: Mapping[str, Any] | None = None,
    selector_eval: Dataset | None = None,
) -> SampleOutcome:
    """Apply a sampler by name.

    For ``xgbclus`` a stratified 20% slice of ``train`` is the selector set
    unless ``selector_eval`` is supplied.
    """
    params = dict(params or {})
    trace = None
    notes: list[str] = []
    if name == "none":
        out = train
    elif name == "rus":
        out = random_undersample(train, seed)
    elif name == "nearmiss1":
        out = near_miss_1(train, params.get("metric", "euclidean"))
    elif name == "xgbclus":
        learner = XGBParams(**params.get("learner", {})) if params.get("learner") else None
        kw = dict(tmax0=params.get("tmax0", -1), fmin0=params.get("fmin0", math.inf), seed=seed)
        if selector_eval is None:
            out, trace = xgbclus_with_holdout(train, learner, params.get("holdout_fraction", 0.2), **kw)
        else:
            out, trace = xgbclus(train, selector_eval, learner, **kw)
    elif name == "smote":
        out = smote(train, params.get("k", 5), seed)
    elif name == "adasyn":
        syn, plan = adasyn_samples(train, params.get("k", 5), seed)
        if plan.uniform_fallback:
            notes.append("no anomalous row has normal neighbours; uniform allocation used")
        out = _append_synthetic(train, syn)
    elif name == "smoteenn":
        out = smote_enn(train, params.get("k", 5), params.get("k_enn", 3), seed)
    elif name == "smotetomek":
        out = smote_tomek(train, params.get("k", 5), seed)
    else:
        raise ValueError(f"unknown sampler {name!r}; expected one of {SAMPLERS}")
    return SampleOutcome(out, balance_report(name, SAMPLER_MODE[name], train, out, notes), trace)
