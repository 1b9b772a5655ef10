import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from txanomaly.dataset import Dataset, gen_synthetic

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_dataset(X, y, names=None) -> Dataset:
    X = np.asarray(X, dtype=np.float64)
    if names is None:
        names = tuple(f"f{j}" for j in range(X.shape[1]))
    return Dataset(tuple(names), X, np.asarray(y))


@pytest.fixture(scope="session")
def small_synth() -> Dataset:
    return gen_synthetic(400, 40, 3.0, 11)


@pytest.fixture(scope="session")
def blobs() -> Dataset:
    """Two overlapping Gaussian blobs, 120 normal and 40 anomalous rows."""
    rng = np.random.default_rng(5)
    X = np.vstack([rng.normal(0, 1, (120, 3)), rng.normal(1.5, 1, (40, 3))])
    y = np.r_[np.zeros(120), np.ones(40)]
    return make_dataset(X, y)


REDUCED_FEATURES = ("indegree", "in_btc", "out_btc", "total_btc", "mean_in_btc", "mean_out_btc")
REFERENCE_ANOMALOUS_ROW = {"indegree": 7, "in_btc": 2902, "out_btc": 2902, "total_btc": 5804,
                       "mean_in_btc": 414.6, "mean_out_btc": 1451}
REFERENCE_NORMAL_TOTAL_BTC = 31.92


def rule_one_tree():
    """total_btc <= 616.683 -> normal leaf; else mean_in_btc <= 1047.517 -> anomalous leaf."""
    from txanomaly.learners import TreeModel

    counts = np.array([[60, 42], [50, 0], [10, 42], [0, 32], [10, 10]], dtype=float)
    f = REDUCED_FEATURES
    return TreeModel(
        feature=np.array([f.index("total_btc"), -1, f.index("mean_in_btc"), -1, -1]),
        threshold=np.array([616.683, 0, 1047.517, 0, 0]),
        left=np.array([1, -1, 3, -1, -1]),
        right=np.array([2, -1, 4, -1, -1]),
        n_samples=counts.sum(axis=1).astype(np.intp),
        value=counts[:, 1] / counts.sum(axis=1),
        impurity=1 - ((counts / counts.sum(axis=1, keepdims=True)) ** 2).sum(axis=1),
        class_counts=counts,
        max_depth=2,
        feature_names=f,
    )


def write_full_schema_csv(path, n_major=300, n_minor=30, seed=0, duplicates=5):
    """A 12-column file built from synthetic rows, with repeated normal rows appended."""
    import csv

    from txanomaly.dataset import FULL_SCHEMA, LABEL

    d = gen_synthetic(n_major, n_minor, 3.0, seed)
    rng = np.random.default_rng(seed)
    rows = []
    for x, label in zip(d.X, d.y):
        row = dict(zip(d.feature_names, x.tolist()))
        row.update(outdegree=int(rng.integers(1, 9)), in_malicious=int(label), out_malicious=int(label),
                   is_malicious=int(label), all_malicious=int(label))
        row[LABEL] = int(label)
        rows.append(row)
    normals = [r for r in rows if r[LABEL] == 0]
    rows += normals[:duplicates]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(FULL_SCHEMA))
        w.writeheader()
        w.writerows(rows)
    return path


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
