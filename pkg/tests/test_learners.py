import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import REFERENCE_ANOMALOUS_ROW, REDUCED_FEATURES, rule_one_tree
from oracles import central_difference, check_tree_against_oracle
from txanomaly.dataset import gen_synthetic
from txanomaly.learners import (
    LEARNERS,
    THRESHOLD,
    AdaBoostParams,
    ConvergenceWarning,
    ForestParams,
    GBoostParams,
    LogisticParams,
    TreeParams,
    XGBParams,
    fit_adaboost,
    fit_forest,
    fit_gboost,
    fit_learner,
    fit_logistic,
    fit_tree,
    fit_xgb,
    gini,
    hard_labels,
    log_loss,
    logistic_grad_hess,
    make_params,
    predict_proba_tree,
    split_gain,
)
from txanomaly.learners.adaboost import stage_weight
from txanomaly.learners.boosting import prior_log_odds
from txanomaly.learners.common import logistic_loss_margin
from txanomaly.learners.logistic import gradient, hessian, objective
from txanomaly.serialize import dumps, loads


@pytest.fixture(scope="module")
def synth():
    d = gen_synthetic(1500, 60, 2.0, 7)
    return d.X, d.y


# ------------------------------------------------------------------ gini


def test_gini_examples():
    assert gini((10, 0)) == 0.0
    assert gini((5, 5)) == 0.5
    assert gini((9, 1)) == pytest.approx(0.18, abs=1e-15)
    with pytest.raises(ValueError):
        gini((0, 0))


# ------------------------------------------------------------------ tree


def test_tree_midpoint_split():
    m = fit_tree(np.array([[1.0], [2], [8], [9]]), np.array([0, 0, 1, 1]))
    root = m.node(0)
    assert (root.feature, root.threshold) == (0, 5.0)
    assert m.depth() == 1


def test_tree_pure_input_is_leaf():
    m = fit_tree(np.random.default_rng(0).normal(size=(10, 2)), np.ones(10))
    assert m.n_nodes == 1 and m.node(0).is_leaf


def test_tree_memorizes_distinct_rows():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 3))
    y = rng.integers(0, 2, 50)
    m = fit_tree(X, y, TreeParams(max_depth=50))
    assert np.array_equal(hard_labels(m.predict_proba(X)), y)


def test_tree_node_invariants(synth):
    X, y = synth
    m = fit_tree(X, y, TreeParams(max_depth=6))
    assert m.depth() <= 6
    for node in m.nodes():
        assert node.impurity == pytest.approx(gini(node.class_counts), abs=1e-15)
        if not node.is_leaf:
            assert node.n_samples == m.node(node.left).n_samples + m.node(node.right).n_samples
            assert np.allclose(np.add(m.node(node.left).class_counts, m.node(node.right).class_counts),
                               node.class_counts)


def test_tree_leaf_fraction_and_boundary():
    # constant feature -> single leaf with counts (3, 1)
    m = fit_tree(np.zeros((4, 1)), np.array([0, 0, 0, 1]))
    assert predict_proba_tree(m, [0.0]) == 0.25
    m2 = fit_tree(np.array([[1.0], [2], [8], [9]]), np.array([0, 0, 1, 1]))
    assert predict_proba_tree(m2, [5.0]) == 0.0  # exactly at the threshold goes left
    assert predict_proba_tree(m2, [5.0 + 1e-9]) == 1.0
    with pytest.raises(ValueError):
        predict_proba_tree(m2, [1.0, 2.0])


def test_reference_row_routed_to_anomalous_leaf():
    m = rule_one_tree()
    x = [REFERENCE_ANOMALOUS_ROW[f] for f in REDUCED_FEATURES]
    assert m.decision_path(x) == [0, 2, 3]
    assert predict_proba_tree(m, x) == 1.0


def test_tree_errors():
    with pytest.raises(ValueError):
        fit_tree(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        fit_tree(np.zeros((3, 1)), np.array([0, 1, 0]), TreeParams(min_samples_leaf=2))


def test_split_search_matches_exhaustive_small():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n, d = int(rng.integers(2, 30)), int(rng.integers(1, 4))
        X = rng.integers(0, 4, size=(n, d)).astype(float)
        check_tree_against_oracle(fit_tree, TreeParams, X, rng.integers(0, 2, n))


def test_sample_weight_equals_duplication():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 5, (20, 2)).astype(float)
    y = rng.integers(0, 2, 20)
    w = rng.integers(1, 4, 20)
    a = fit_tree(X, y, TreeParams(max_depth=3), sample_weight=w.astype(float))
    b = fit_tree(np.repeat(X, w, axis=0), np.repeat(y, w), TreeParams(max_depth=3))
    assert np.array_equal(a.feature, b.feature)
    assert np.array_equal(a.threshold, b.threshold)


# ---------------------------------------------------------------- forest


def test_degenerate_forest_equals_tree(synth):
    X, y = synth
    f = fit_forest(X, y, ForestParams(n_trees=1, features_per_split=X.shape[1], bootstrap=False, max_depth=5))
    t = fit_tree(X, y, TreeParams(max_depth=5))
    assert np.array_equal(f.predict_proba(X), t.predict_proba(X))


def test_forest_mean_and_determinism(synth):
    X, y = synth
    p = ForestParams(n_trees=7, max_depth=4, seed=3)
    f = fit_forest(X, y, p)
    Q = np.random.default_rng(0).normal(size=(20, X.shape[1])) * X.std(0) + X.mean(0)
    assert np.allclose(f.predict_proba(Q), np.mean([t.predict_proba(Q) for t in f.trees], axis=0), atol=1e-15)
    assert dumps(fit_forest(X, y, p)) == dumps(f)
    assert dumps(fit_forest(X, y, ForestParams(n_trees=7, max_depth=4, seed=4))) != dumps(f)


@pytest.mark.parametrize("fit,params", [
    (fit_forest, ForestParams(n_trees=4, max_depth=4, seed=1)),
    (fit_gboost, GBoostParams(n_stages=8)),
    (fit_xgb, XGBParams(n_stages=8)),
])
def test_row_order_invariance(synth, fit, params):
    X, y = synth
    perm = np.random.default_rng(9).permutation(len(y))
    assert np.array_equal(fit(X, y, params).predict_proba(X), fit(X[perm], y[perm], params).predict_proba(X))


# --------------------------------------------------------------- boosting


def test_logistic_grad_hess_examples():
    g, h = logistic_grad_hess(np.array([0.0]), np.array([1]))
    assert g[0] == -0.5 and h[0] == 0.25


def test_grad_hess_match_finite_differences():
    rng = np.random.default_rng(4)
    for m, y in zip(rng.uniform(-4, 4, 20), rng.integers(0, 2, 20)):
        g, h = logistic_grad_hess(np.array([m]), np.array([y]))
        loss = lambda z: logistic_loss_margin(np.array([z]), np.array([y]))[0]
        grad = lambda z: logistic_grad_hess(np.array([z]), np.array([y]))[0][0]
        assert g[0] == pytest.approx(central_difference(loss, m), rel=1e-4)
        assert h[0] == pytest.approx(central_difference(grad, m), rel=1e-4)


def test_gboost_loss_non_increasing(synth):
    X, y = synth
    m = fit_gboost(X, y, GBoostParams(n_stages=40, learning_rate=0.1))
    assert np.all(np.diff(m.train_loss) <= 1e-12)


def test_zero_stages_is_prior(synth):
    X, y = synth
    m = fit_gboost(X, y, GBoostParams(n_stages=0))
    assert np.allclose(m.predict_proba(X), y.mean(), atol=1e-15)
    assert m.base_score == pytest.approx(math.log(y.mean() / (1 - y.mean())))


def test_xgb_gain_formula():
    assert split_gain(2, 1, -2, 1, reg_lambda=1, gamma=0) == 2.0


def test_xgb_large_gamma_prunes_everything(synth):
    X, y = synth
    m = fit_xgb(X, y, XGBParams(n_stages=5, gamma=1e9))
    assert all(s.n_nodes == 1 for s in m.stages)
    prior = 1 / (1 + math.exp(-prior_log_odds(y)))
    assert m.predict_proba(X[:5]) == pytest.approx(prior, abs=0.05)


def test_xgb_huge_lambda_gives_prior(synth):
    X, y = synth
    m = fit_xgb(X, y, XGBParams(n_stages=5, reg_lambda=1e12))
    assert np.allclose(m.predict_proba(X), y.mean(), atol=1e-9)


def test_xgb_loss_non_increasing(synth):
    X, y = synth
    m = fit_xgb(X, y, XGBParams(n_stages=30))
    assert np.all(np.diff(m.train_loss) <= 1e-12)


def test_boosted_probability_formula(synth):
    X, y = synth
    m = fit_xgb(X, y, XGBParams(n_stages=6))
    z = m.base_score + m.learning_rate * sum(s.predict_value(X) for s in m.stages)
    assert np.allclose(m.predict_proba(X), 1 / (1 + np.exp(-z)), atol=1e-15)


def test_boosting_needs_both_classes():
    with pytest.raises(ValueError):
        fit_gboost(np.zeros((4, 1)), np.zeros(4))


# --------------------------------------------------------------- adaboost


def test_stage_weight():
    assert stage_weight(0.25) == pytest.approx(math.log(3))


def test_adaboost_perfect_stump_alone():
    X = np.array([[0.0], [1], [2], [3]])
    m = fit_adaboost(X, np.array([0, 0, 1, 1]))
    assert len(m.stumps) == 1
    assert np.array_equal(hard_labels(m.predict_proba(X)), [0, 0, 1, 1])


def test_adaboost_weights_normalized(synth):
    X, y = synth
    m = fit_adaboost(X, y, AdaBoostParams(n_rounds=15))
    assert m.weight_sums and all(abs(s - 1.0) < 1e-12 for s in m.weight_sums)
    assert all(math.isfinite(a) for _, a in m.stumps)
    p = m.predict_proba(X)
    assert np.all((0 <= p) & (p <= 1))


# --------------------------------------------------------------- logistic


def test_logistic_boundary_and_ordering():
    X = np.array([[0.0], [1], [2], [3], [4], [5]])
    y = np.array([0, 0, 0, 1, 1, 1])
    m = fit_logistic(X, y, LogisticParams(l2=0.1))
    assert m.weights[0] > 0
    x0 = -m.bias / m.weights[0]
    assert m.predict_proba(np.array([[x0]]))[0] == pytest.approx(0.5, abs=1e-12)
    theta = np.r_[m.weights, m.bias]
    assert objective(theta, X, y, 0.1) < objective(np.zeros(2), X, y, 0.1)


def test_logistic_gradient_and_hessian_finite_differences():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 3))
    y = rng.integers(0, 2, 40)
    for _ in range(20):
        theta = rng.normal(size=4)
        g = gradient(theta, X, y, 0.01)
        H = hessian(theta, X, y, 0.01)
        for j in range(4):
            e = np.zeros(4)
            e[j] = 1e-5
            fd = (objective(theta + e, X, y, 0.01) - objective(theta - e, X, y, 0.01)) / 2e-5
            assert g[j] == pytest.approx(fd, rel=1e-4, abs=1e-9)
            fdg = (gradient(theta + e, X, y, 0.01) - gradient(theta - e, X, y, 0.01)) / 2e-5
            assert np.allclose(H[:, j], fdg, rtol=1e-4, atol=1e-8)


def test_logistic_nonconvergence_warns():
    X = np.array([[0.0], [1], [2], [3]])
    y = np.array([0, 1, 0, 1])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        m = fit_logistic(X, y, LogisticParams(max_iters=1, tolerance=1e-30))
    assert any(issubclass(i.category, ConvergenceWarning) for i in w)
    assert not m.converged and m.grad_norm > 0


# ----------------------------------------------------------- shared policy


@pytest.mark.parametrize("kind", sorted(LEARNERS))
def test_probabilities_in_unit_interval_and_round_trip(kind, synth):
    X, y = synth
    small = {"rf": {"n_trees": 5}, "gb": {"n_stages": 10}, "xgb": {"n_stages": 10}, "adb": {"n_rounds": 10}}
    m = fit_learner(kind, X, y, small.get(kind), seed=1)
    Q = np.random.default_rng(0).normal(size=(100, X.shape[1])) * X.std(0) * 2 + X.mean(0)
    p = m.predict_proba(Q)
    assert np.all((0 <= p) & (p <= 1))
    assert np.array_equal(loads(dumps(m)).predict_proba(Q), p)


def test_threshold_constant():
    assert THRESHOLD == 0.5
    assert hard_labels(np.array([0.5, 0.5000001, 0.2])).tolist() == [0, 1, 0]


def test_make_params_rejects_unknown():
    with pytest.raises(ValueError):
        make_params("rf", {"n_tree": 3})
    with pytest.raises(ValueError):
        make_params("nope", {})


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.data())
def test_log_loss_finite(p, data):
    y = data.draw(st.lists(st.integers(0, 1), min_size=len(p), max_size=len(p)))
    assert math.isfinite(log_loss(np.array(y), np.array(p)))
