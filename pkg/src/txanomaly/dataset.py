"""Transaction data ingestion, preprocessing and synthetic generation.

A :class:`Dataset` is the currency passed between every stage of the
pipeline: a finite ``N x D`` float matrix with named columns plus a binary
label vector (1 = anomalous, 0 = normal).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import betainc

LABEL = "out_and_tx_malicious"

FULL_SCHEMA = (
    "indegree",
    "outdegree",
    "in_btc",
    "out_btc",
    "total_btc",
    "mean_in_btc",
    "mean_out_btc",
    "in_malicious",
    "out_malicious",
    "is_malicious",
    "all_malicious",
    LABEL,
)

REDUCED_SCHEMA = (
    "indegree",
    "in_btc",
    "out_btc",
    "total_btc",
    "mean_in_btc",
    "mean_out_btc",
    LABEL,
)

# outdegree fails the significance test; the *_malicious columns leak the label.
DEFAULT_DROP = ("outdegree", "in_malicious", "out_malicious", "is_malicious", "all_malicious")


class SchemaError(ValueError):
    """Header or column set does not match what was expected."""


class DataError(ValueError):
    """A cell could not be parsed or violates the dataset invariants."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class DegenerateInputError(ValueError):
    """Statistic is undefined for the given input."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix with a binary label.

    Parameters
    ----------
    feature_names : tuple of str
        Unique column names, one per column of ``X``.
    X : ndarray of shape (n_rows, n_features)
        Finite float feature values.
    y : ndarray of shape (n_rows,)
        Labels in {0, 1}.
    label_name : str
        Name of the label column when serialized.
    """

    feature_names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    label_name: str = LABEL

    def __post_init__(self) -> None:
        names = tuple(self.feature_names)
        X = np.array(self.X, dtype=np.float64, copy=True)
        y = np.array(self.y, copy=True)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, len(names))
        if X.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got shape {X.shape}")
        if X.shape[1] != len(names):
            raise DataError(f"{X.shape[1]} columns but {len(names)} feature names")
        if len(set(names)) != len(names):
            raise DataError("feature names are not unique")
        if self.label_name in names:
            raise DataError(f"label column {self.label_name!r} is also a feature")
        if y.shape != (X.shape[0],):
            raise DataError(f"{X.shape[0]} rows but {y.shape[0] if y.ndim else 0} labels")
        if not np.all(np.isfinite(X)):
            bad = np.argwhere(~np.isfinite(X))[0]
            raise DataError("non-finite value", row=int(bad[0]), column=names[bad[1]])
        if y.size and not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        y = y.astype(np.int8)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_positive(self) -> int:
        return int(self.y.sum())

    @property
    def n_negative(self) -> int:
        return len(self) - self.n_positive

    def subset(self, index: Sequence[int] | np.ndarray) -> "Dataset":
        index = np.asarray(index, dtype=np.intp)
        return Dataset(self.feature_names, self.X[index], self.y[index], self.label_name)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]

    @classmethod
    def concat(cls, parts: Iterable["Dataset"]) -> "Dataset":
        parts = list(parts)
        first = parts[0]
        for p in parts[1:]:
            if p.feature_names != first.feature_names:
                raise SchemaError("cannot concatenate datasets with different columns")
        return cls(
            first.feature_names,
            np.vstack([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            first.label_name,
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.feature_names == other.feature_names
            and self.label_name == other.label_name
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )


@dataclass(frozen=True)
class SplitPair:
    train: Dataset
    test: Dataset
    train_index: np.ndarray = field(repr=False)
    test_index: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class TTestResult:
    feature: str
    t_value: float
    p_value: float
    degrees_of_freedom: float


# --------------------------------------------------------------------------- io


def load_csv(path: str | Path, schema: Sequence[str] = FULL_SCHEMA, label: str = LABEL) -> Dataset:
    """Read a header-first comma separated file into a :class:`Dataset`.

    Columns may appear in any order in the file but the set must equal
    ``schema`` exactly. Features keep the schema order; rows keep file order.
    """
    schema = list(schema)
    if label not in schema:
        raise SchemaError(f"schema does not contain label column {label!r}")
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in schema if c not in header]
        extra = [c for c in header if c not in schema]
        if missing or extra or len(header) != len(set(header)):
            parts = []
            if missing:
                parts.append(f"missing columns {missing}")
            if extra:
                parts.append(f"unexpected columns {extra}")
            if len(header) != len(set(header)):
                parts.append("duplicate columns")
            raise SchemaError(f"{path}: " + "; ".join(parts))

        features = [c for c in schema if c != label]
        pos = [header.index(c) for c in features]
        label_pos = header.index(label)
        rows: list[list[float]] = []
        labels: list[int] = []
        for rowno, record in enumerate(reader, start=1):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise DataError(
                    f"{path}: row {rowno} has {len(record)} fields, expected {len(header)}",
                    row=rowno,
                )
            values = []
            for name, j in zip(features, pos):
                values.append(_parse_cell(record[j], path, rowno, name))
            lab = _parse_cell(record[label_pos], path, rowno, label)
            if lab not in (0.0, 1.0):
                raise DataError(
                    f"{path}: row {rowno}, column {label!r}: label {record[label_pos]!r} is not 0 or 1",
                    row=rowno,
                    column=label,
                )
            rows.append(values)
            labels.append(int(lab))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset(tuple(features), np.array(rows, dtype=np.float64), np.array(labels), label)


def _parse_cell(text: str, path: Path, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(
            f"{path}: row {row}, column {column!r}: cannot parse {text!r} as a number",
            row=row,
            column=column,
        ) from None
    if not math.isfinite(value):
        raise DataError(f"{path}: row {row}, column {column!r}: non-finite value", row=row, column=column)
    return value


def format_number(value: float) -> str:
    """Shortest text that parses back to exactly ``value``."""
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def write_csv(d: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*d.feature_names, d.label_name])
        for row, lab in zip(d.X, d.y):
            w.writerow([*(format_number(v) for v in row), int(lab)])


# ---------------------------------------------------------------- statistics


def welch_t_test(a: Sequence[float], b: Sequence[float], feature: str = "") -> TTestResult:
    """Two-sample t-test without the equal-variance assumption.

    ``t`` is positive when ``mean(a) > mean(b)``. The two-tailed p-value is
    ``I_{df/(df+t^2)}(df/2, 1/2)``, the regularized incomplete beta form of
    the Student t tail.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise DegenerateInputError("each group needs at least two values")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    if se2 == 0.0:
        if ma == mb:
            raise DegenerateInputError("both groups are constant and equal; t is undefined")
        # Zero spread with distinct means: infinitely significant.
        t = math.copysign(math.inf, ma - mb)
        return TTestResult(feature, t, 0.0, float(na + nb - 2))
    t = (ma - mb) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(feature, float(t), min(max(p, 0.0), 1.0), float(df))


def ttest_features(d: Dataset) -> list[TTestResult]:
    """Per-feature Welch test of normal rows against anomalous rows.

    The sign convention makes ``t`` negative when anomalous rows have the
    larger mean.
    """
    neg = d.X[d.y == 0]
    pos = d.X[d.y == 1]
    out = []
    for j, name in enumerate(d.feature_names):
        try:
            out.append(welch_t_test(neg[:, j], pos[:, j], feature=name))
        except DegenerateInputError:
            out.append(TTestResult(name, math.nan, 1.0, math.nan))
    return out


def insignificant_features(results: Iterable[TTestResult], alpha: float = 0.01) -> list[str]:
    """Names whose p-value does not clear ``alpha``."""
    return [r.feature for r in results if not r.p_value < alpha]


def pearson_correlation(d: Dataset) -> np.ndarray:
    """Symmetric ``D x D`` correlation matrix with an exact unit diagonal."""
    X = d.X
    if X.shape[0] < 2:
        raise DegenerateInputError("correlation needs at least two rows")
    centered = X - X.mean(axis=0)
    ss = np.einsum("ij,ij->j", centered, centered)
    for j, s in enumerate(ss):
        if s == 0.0:
            raise DegenerateInputError(f"column {d.feature_names[j]!r} is constant")
    norm = centered / np.sqrt(ss)
    corr = norm.T @ norm
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


# ------------------------------------------------------------- preprocessing


def select_features(d: Dataset, drop: Sequence[str] = DEFAULT_DROP) -> Dataset:
    """Remove the named feature columns."""
    drop = list(drop)
    if d.label_name in drop:
        raise SchemaError(f"cannot drop the label column {d.label_name!r}")
    unknown = [c for c in drop if c not in d.feature_names]
    if unknown:
        raise SchemaError(f"cannot drop unknown columns {unknown}")
    keep = [j for j, c in enumerate(d.feature_names) if c not in drop]
    return Dataset(
        tuple(d.feature_names[j] for j in keep), d.X[:, keep], d.y, d.label_name
    )


def dedup_majority(d: Dataset) -> Dataset:
    """Drop repeated normal rows, keeping each first occurrence.

    Anomalous rows are never touched, duplicates included.
    """
    neg = np.flatnonzero(d.y == 0)
    if neg.size == 0:
        return d
    # stable sort inside np.unique -> the returned index is the first occurrence
    _, first = np.unique(d.X[neg], axis=0, return_index=True)
    keep = np.ones(len(d), dtype=bool)
    keep[neg] = False
    keep[neg[first]] = True
    return d.subset(np.flatnonzero(keep))


def cap_negatives(d: Dataset, n_keep: int, seed: int) -> Dataset:
    """Keep a uniform random subset of ``n_keep`` normal rows (order preserved)."""
    neg = np.flatnonzero(d.y == 0)
    if n_keep >= neg.size:
        return d
    rng = np.random.default_rng(seed)
    chosen = rng.choice(neg, size=n_keep, replace=False)
    keep = np.sort(np.concatenate([np.flatnonzero(d.y == 1), chosen]))
    return d.subset(keep)


def stratified_split(d: Dataset, test_fraction: float = 0.2, seed: int = 0) -> SplitPair:
    """Per-class shuffled hold-out split.

    Each class contributes ``round(test_fraction * class_count)`` rows to the
    test part, clamped so that both parts keep at least one row of that
    class. Both parts keep the input row order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    children = np.random.SeedSequence(seed).spawn(2)
    test_parts = []
    for label, ss in zip((0, 1), children):
        members = np.flatnonzero(d.y == label)
        if members.size == 0:
            continue
        if members.size < 2:
            raise DataError(f"class {label} has {members.size} row(s); cannot stratify")
        n_test = int(math.floor(test_fraction * members.size + 0.5))
        n_test = min(max(n_test, 1), members.size - 1)
        perm = np.random.default_rng(ss).permutation(members.size)
        test_parts.append(members[perm[:n_test]])
    test_index = np.sort(np.concatenate(test_parts))
    mask = np.ones(len(d), dtype=bool)
    mask[test_index] = False
    train_index = np.flatnonzero(mask)
    return SplitPair(d.subset(train_index), d.subset(test_index), train_index, test_index)


# ----------------------------------------------------------------- synthetic

# (location, scale) of each feature for the normal class
_SYNTH_COLUMNS = {
    "indegree": (3.0, 1.0),
    "in_btc": (40.0, 15.0),
    "out_btc": (40.0, 15.0),
    "total_btc": (80.0, 30.0),
    "mean_in_btc": (15.0, 6.0),
    "mean_out_btc": (12.0, 5.0),
}
_SHIFTED = ("total_btc", "mean_in_btc", "mean_out_btc")
_SYNTH_RHO = 0.95


def gen_synthetic(n_major: int, n_minor: int, separation: float, seed: int) -> Dataset:
    """Desk-scale stand-in for the reduced transaction schema.

    Every feature is marginally Gaussian. ``in_btc``/``out_btc`` share one
    latent factor and ``total_btc``/``mean_in_btc``/``mean_out_btc`` share
    another (correlation 0.95 inside each group), mimicking the strongly
    correlated btc amounts of real data. Anomalous rows have the second group
    shifted by ``separation`` standard deviations, so the classes overlap
    along a single direction rather than being trivially separable.
    """
    if n_major < 1 or n_minor < 1:
        raise ValueError("both classes need at least one row")
    rng = np.random.default_rng(seed)
    n = n_major + n_minor
    names = tuple(_SYNTH_COLUMNS)
    Z = np.empty((n, len(names)))
    Z[:, 0] = rng.standard_normal(n)
    a = rng.standard_normal((n, 1))
    Z[:, 1:3] = math.sqrt(_SYNTH_RHO) * a + math.sqrt(1 - _SYNTH_RHO) * rng.standard_normal((n, 2))
    b = rng.standard_normal((n, 1))
    Z[:, 3:6] = math.sqrt(_SYNTH_RHO) * b + math.sqrt(1 - _SYNTH_RHO) * rng.standard_normal((n, 3))
    y = np.zeros(n, dtype=np.int8)
    y[n_major:] = 1
    shifted = [names.index(c) for c in _SHIFTED]
    Z[n_major:, shifted] += separation
    loc = np.array([v[0] for v in _SYNTH_COLUMNS.values()])
    scale = np.array([v[1] for v in _SYNTH_COLUMNS.values()])
    X = loc + scale * Z
    perm = rng.permutation(n)
    return Dataset(names, X[perm], y[perm])
