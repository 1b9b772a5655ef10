import numpy as np
import pytest

from conftest import make_dataset
from txanomaly.dataset import gen_synthetic, stratified_split
from txanomaly.ensemble import (
    STACK_BASES,
    VOTE_MEMBERS,
    MemberSpec,
    VotingModel,
    combine_votes,
    fit_stacked,
    fit_voting,
    oof_meta_features,
    predict_stacked,
    predict_voting,
    stratified_folds,
)
from txanomaly.learners import LogisticModel, fit_tree, log_loss
from txanomaly.serialize import dumps, loads

SMALL = [
    MemberSpec("rf", "rf", {"n_trees": 5, "max_depth": 4}),
    MemberSpec("dt", "dt", {"max_depth": 4}),
    MemberSpec("gb", "gb", {"n_stages": 10}),
    MemberSpec("adb", "adb", {"n_rounds": 10}),
]


class _Fixed:
    def __init__(self, fn, n_features):
        self.fn = fn
        self.feature_names = tuple(f"x{j}" for j in range(n_features))

    def predict_proba(self, X):
        return self.fn(np.asarray(X))


class Recorder:
    """Learner that logs which row ids (column 0) it trained on and scored."""

    def __init__(self):
        self.log = []

    def __call__(self, X, y, seed):
        trained = set(X[:, 0].astype(int).tolist())
        entry = {"trained": trained, "scored": set()}
        self.log.append(entry)

        def score(Q):
            entry["scored"] |= set(Q[:, 0].astype(int).tolist())
            return np.full(Q.shape[0], 0.5)

        return _Fixed(score, X.shape[1])


@pytest.fixture(scope="module")
def data():
    d = gen_synthetic(300, 40, 2.0, 5)
    return stratified_split(d, 0.3, 2)


def test_folds_stratified_and_errors():
    y = np.r_[np.zeros(37), np.ones(13)]
    a = stratified_folds(y, 5, 1)
    for f in range(5):
        assert 0 < y[a == f].sum() < (a == f).sum()
    assert np.array_equal(a, stratified_folds(y, 5, 1))
    with pytest.raises(ValueError):
        stratified_folds(y, 14, 0)
    with pytest.raises(ValueError):
        stratified_folds(y, 1, 0)


def test_meta_feature_shape(data):
    tr = data.train
    sub = tr.subset(np.r_[np.flatnonzero(tr.y == 0)[:80], np.flatnonzero(tr.y == 1)[:20]])
    m = fit_stacked(sub, SMALL, folds=4, seed=0)
    assert m.meta_features.shape == (100, 4)
    assert np.all((0 <= m.meta_features) & (m.meta_features <= 1))
    assert m.meta.weights.shape == (4,)


def test_oof_no_leakage_recorded():
    n = 60
    X = np.column_stack([np.arange(n), np.random.default_rng(0).normal(size=n)])
    y = np.r_[np.zeros(40), np.ones(20)]
    d = make_dataset(X, y)
    rec = Recorder()
    m = fit_stacked(d, [MemberSpec("rec", rec)], folds=5, seed=3)
    fold_log, full_log = rec.log[:5], rec.log[5]
    for f, entry in enumerate(fold_log):
        held = set(np.flatnonzero(m.fold_assignment == f).tolist())
        assert entry["scored"] == held
        assert entry["trained"].isdisjoint(entry["scored"])
        assert entry["trained"] | held == set(range(n))
    assert full_log["trained"] == set(range(n))


def test_meta_features_regenerate_exactly(data):
    m = fit_stacked(data.train, SMALL, folds=3, seed=4)
    again = oof_meta_features(data.train, SMALL, m.fold_assignment, m.seed)
    assert np.array_equal(again, m.meta_features)
    for f, row in enumerate(m.fold_models):
        held = m.fold_assignment == f
        for j, model in enumerate(row):
            assert np.array_equal(model.predict_proba(data.train.X[held]), m.meta_features[held, j])


def test_perfect_base_gets_largest_weight():
    rng = np.random.default_rng(1)
    y = np.r_[np.zeros(60), np.ones(40)]
    X = np.column_stack([y, rng.normal(size=100)])
    d = make_dataset(X, y)
    copy = MemberSpec("copy", lambda X, y, s: _Fixed(lambda Q: Q[:, 0].astype(float), 2))
    noise = MemberSpec("noise", lambda X, y, s: _Fixed(lambda Q: 1 / (1 + np.exp(-Q[:, 1])), 2))
    const = MemberSpec("const", lambda X, y, s: _Fixed(lambda Q: np.full(len(Q), 0.4), 2))
    m = fit_stacked(d, [noise, copy, const], folds=2, seed=0)
    assert int(np.argmax(m.meta.weights)) == 1
    assert m.meta.weights[1] > 0


def test_neutral_meta():
    names = ("a",)
    half = _Fixed(lambda Q: np.full(len(Q), 0.5), 1)
    from txanomaly.ensemble import StackedModel

    m = StackedModel(["p", "q"], [half, half], LogisticModel(np.zeros(2), 0.0, ("p", "q")), 2,
                     np.zeros(1, dtype=np.intp), np.zeros((1, 2)), names, 0)
    assert predict_stacked(m, np.array([[1.0], [7.0]])).tolist() == [0.5, 0.5]
    with pytest.raises(ValueError):
        predict_stacked(m, np.array([[1.0, 2.0]]))


def test_stacked_deterministic_and_not_worse_than_worst(data):
    a = fit_stacked(data.train, SMALL, folds=3, seed=6)
    b = fit_stacked(data.train, SMALL, folds=3, seed=6)
    assert dumps(a) == dumps(b)
    X, y = data.test.X, data.test.y
    stacked = log_loss(y, a.predict_proba(X))
    worst = max(log_loss(y, m.predict_proba(X)) for m in a.base_models)
    assert stacked <= worst


def test_stacked_round_trip(data):
    m = fit_stacked(data.train, SMALL[:2], folds=3, seed=1)
    back = loads(dumps(m))
    assert np.array_equal(back.predict_proba(data.test.X), m.predict_proba(data.test.X))
    assert np.array_equal(back.fold_assignment, m.fold_assignment)


# ------------------------------------------------------------------ voting


def test_vote_examples():
    labels, _ = combine_votes(np.array([[0.9, 0.1, 0.8, 0.7, 0.2]]), "hard")
    assert labels.tolist() == [1]
    labels, mean = combine_votes(np.array([[0.6, 0.2, 0.4]]), "soft")
    assert mean[0] == pytest.approx(0.4) and labels.tolist() == [0]
    # 2-2 split resolved by the mean probability
    labels, mean = combine_votes(np.array([[0.9, 0.8, 0.3, 0.2]]), "hard")
    assert mean[0] == pytest.approx(0.55) and labels.tolist() == [1]
    labels, _ = combine_votes(np.array([[0.6, 0.6, 0.3, 0.2]]), "hard")
    assert labels.tolist() == [0]
    # tie in votes and mean exactly 0.5 -> label 0
    labels, _ = combine_votes(np.array([[0.75, 0.25]]), "hard")
    assert labels.tolist() == [0]


def test_voting_identical_members_agree(data):
    t = fit_tree(data.train.X, data.train.y)
    for mode in ("hard", "soft"):
        v = VotingModel(["a", "b", "c"], [t, t, t], mode, data.train.feature_names)
        labels, p = predict_voting(v, data.test.X)
        single = t.predict_proba(data.test.X)
        assert np.array_equal(labels, (single > 0.5).astype(np.int8))
        assert np.allclose(p, single, atol=1e-15)


def test_soft_vote_member_permutation(data):
    members = [MemberSpec("dt", "dt", {"max_depth": 3}), MemberSpec("lr", "lr"), MemberSpec("gb", "gb", {"n_stages": 5})]
    v = fit_voting(data.train, members, "soft", seed=2)
    w = VotingModel(v.names[::-1], v.members[::-1], "soft", v.feature_names)
    assert np.allclose(v.predict_proba(data.test.X), w.predict_proba(data.test.X), atol=1e-15)
    assert np.array_equal(v.predict(data.test.X), w.predict(data.test.X))


def test_voting_needs_two_members(data):
    t = fit_tree(data.train.X, data.train.y)
    with pytest.raises(ValueError):
        VotingModel(["a"], [t], "hard", data.train.feature_names)
    with pytest.raises(ValueError):
        VotingModel(["a", "b"], [t, t], "median", data.train.feature_names)


def test_default_member_lists():
    assert STACK_BASES == ("rf", "dt", "gb", "adb")
    assert VOTE_MEMBERS == ("dt", "xgb", "gb", "rf", "adb")
