"""KernelSHAP attributions for any probability model.

Features outside a coalition take each background row's value in turn and
the model output is averaged over the background. Attributions solve the
Shapley-kernel weighted least squares problem with the empty and full
coalitions imposed as exact constraints, so ``base_value + sum(phis) == fx``
holds to solver precision.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset

EXHAUSTIVE_LIMIT = 4096


class InsufficientCoalitionsError(ValueError):
    """The sampled coalitions do not determine the attributions."""


@dataclass(frozen=True)
class AttributionVector:
    base_value: float
    phis: np.ndarray
    fx: float
    mode: str = "exhaustive"

    def efficiency_gap(self) -> float:
        return abs(self.base_value + float(np.sum(self.phis)) - self.fx)


@dataclass(frozen=True)
class GlobalImportance:
    items: list[tuple[str, float]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "mean_abs_shap"])
        for name, v in self.items:
            w.writerow([name, repr(float(v))])
        return buf.getvalue()


def shapley_kernel_weight(d: int, size: int) -> float:
    """``(d - 1) / (C(d, size) * size * (d - size))`` for ``0 < size < d``."""
    return (d - 1) / (math.comb(d, size) * size * (d - size))


def as_model_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a fitted model (``predict_proba``) or callable into a batch function."""
    fn = model.predict_proba if hasattr(model, "predict_proba") else model

    def batch(X: np.ndarray) -> np.ndarray:
        return np.asarray(fn(X), dtype=np.float64).reshape(-1)

    return batch


def all_coalitions(d: int) -> np.ndarray:
    """Every proper, non-empty coalition as a 0/1 matrix."""
    rows = [z for z in itertools.product((0, 1), repeat=d) if 0 < sum(z) < d]
    return np.array(rows, dtype=np.float64).reshape(-1, d)


def _sample_coalitions(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    # draw sizes in proportion to the kernel mass of each size, then a uniform subset
    sizes = np.arange(1, d)
    mass = np.array([(d - 1) / (s * (d - s)) for s in sizes])
    drawn = rng.choice(sizes, size=n, p=mass / mass.sum())
    Z = np.zeros((n, d))
    for r, s in enumerate(drawn):
        Z[r, rng.choice(d, size=s, replace=False)] = 1.0
    return Z


def coalition_values(f, x: np.ndarray, background: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Mean model output with features outside each coalition taken from the background."""
    n_bg = background.shape[0]
    out = np.empty(Z.shape[0])
    step = max(1, 200_000 // max(n_bg, 1))
    for s in range(0, Z.shape[0], step):
        z = Z[s:s + step].astype(bool)
        X = np.where(z[:, None, :], x[None, None, :], background[None, :, :])
        out[s:s + step] = f(X.reshape(-1, x.size)).reshape(z.shape[0], n_bg).mean(axis=1)
    return out


def kernel_shap(
    model_fn,
    x,
    background,
    n_coalitions: int | None = None,
    seed: int = 0,
) -> AttributionVector:
    """Explain ``model_fn`` at ``x`` against ``background``.

    All coalitions are enumerated when ``n_coalitions`` is ``None`` and
    ``2^D <= 4096``, or when ``n_coalitions >= 2^D``; otherwise
    ``n_coalitions`` coalitions are sampled with probability proportional to
    the Shapley kernel and weighted uniformly.
    """
    f = as_model_fn(model_fn)
    bg = background.X if isinstance(background, Dataset) else np.asarray(background, dtype=np.float64)
    bg = np.atleast_2d(bg)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if bg.shape[0] == 0:
        raise ValueError("background must contain at least one row")
    d = x.size
    if bg.shape[1] != d:
        raise ValueError(f"instance has {d} features, background has {bg.shape[1]}")
    fx = float(f(x[None, :])[0])
    base = float(np.mean(f(bg)))
    if d == 1:
        return AttributionVector(base, np.array([fx - base]), fx)

    exhaustive = (n_coalitions is None and 2 ** d <= EXHAUSTIVE_LIMIT) or (
        n_coalitions is not None and n_coalitions >= 2 ** d
    )
    if exhaustive:
        Z = all_coalitions(d)
        sizes = Z.sum(axis=1).astype(int)
        w = np.array([shapley_kernel_weight(d, s) for s in sizes])
        mode = "exhaustive"
    else:
        n = n_coalitions if n_coalitions is not None else 2 * d + 2048
        if n < d + 2:
            raise InsufficientCoalitionsError(f"need at least {d + 2} coalitions, got {n}")
        Z = _sample_coalitions(d, n, np.random.default_rng(seed))
        w = np.ones(n)
        mode = "sampled"
        if np.unique(Z.sum(axis=1)).size == 1:
            raise InsufficientCoalitionsError("every sampled coalition has the same size")

    v = coalition_values(f, x, bg, Z)
    total = fx - base
    # eliminate the last attribution through sum(phi) == fx - base
    A = Z[:, :-1] - Z[:, -1:]
    b = v - base - Z[:, -1] * total
    sw = np.sqrt(w)
    sol, _, rank, _ = np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)
    if rank < d - 1:
        raise InsufficientCoalitionsError("coalition design is rank deficient")
    phis = np.append(sol, total - sol.sum())
    return AttributionVector(base, phis, fx, mode)


def background_sample(train: Dataset, n: int = 100, seed: int = 0) -> Dataset:
    """Class-stratified random background of at most ``n`` rows."""
    if len(train) <= n:
        return train
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(train.y == 1)
    neg = np.flatnonzero(train.y == 0)
    n_pos = int(round(n * pos.size / len(train)))
    n_pos = min(pos.size, max(n_pos, 1 if pos.size else 0))
    n_neg = min(neg.size, n - n_pos)
    idx = np.concatenate([rng.choice(pos, n_pos, replace=False), rng.choice(neg, n_neg, replace=False)])
    return train.subset(np.sort(idx))


def global_importance(attributions: Sequence[AttributionVector], feature_names: Sequence[str]) -> GlobalImportance:
    """Features ranked by mean absolute attribution (stable for ties)."""
    if not attributions:
        raise ValueError("no attributions given")
    P = np.vstack([a.phis for a in attributions])
    if P.shape[1] != len(feature_names):
        raise ValueError("attribution length does not match feature names")
    mean_abs = np.abs(P).mean(axis=0)
    order = sorted(range(len(feature_names)), key=lambda j: -mean_abs[j])
    return GlobalImportance([(feature_names[j], float(mean_abs[j])) for j in order])


def force_record(a: AttributionVector, feature_names: Sequence[str], feature_values) -> dict:
    """Plot data for a force plot: base, output and per-feature pushes by |phi|."""
    values = np.asarray(feature_values, dtype=np.float64).reshape(-1)
    if not len(feature_names) == values.size == a.phis.size:
        raise ValueError("feature names, values and attributions differ in length")
    order = sorted(range(values.size), key=lambda j: -abs(a.phis[j]))
    return {
        "base_value": a.base_value,
        "fx": a.fx,
        "mode": a.mode,
        "features": [
            {"name": feature_names[j], "value": float(values[j]), "phi": float(a.phis[j])} for j in order
        ],
    }


def attribution_report(records: Sequence[dict]) -> str:
    return json.dumps(list(records), indent=2)
