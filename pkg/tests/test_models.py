import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairbench.datasets import SyntheticImbalanceConfig, TabularDataset, generate_imbalance
from fairbench.models import (ForestConfig, LogisticConfig, LogisticModel, available_backends, fit_forest,
                              fit_logistic, fit_model, load_model, logistic_objective, make_config, predict,
                              predict_scores, save_model)
from fairbench.models._tree_py import build_tree as py_build_tree

HAS_EXT = "cython" in available_backends()


@pytest.fixture(scope="module")
def synth():
    return generate_imbalance(SyntheticImbalanceConfig(n=600, seed=2))


def replicate(data, k, rows):
    """Copy ``rows`` an extra k-1 times, returning the replicated dataset and the equivalent weights."""
    extra = np.repeat(rows, k - 1)
    idx = np.concatenate([np.arange(data.n), extra])
    rep = TabularDataset(data.X[idx], data.y[idx], data.s[idx])
    w = np.ones(data.n)
    w[rows] = k
    return rep, data.with_weights(w)


class TestLogistic:
    def test_separable_two_points(self):
        d = TabularDataset(np.array([[0.0], [1.0]]), [0, 1], [0, 1])
        m = fit_logistic(d, LogisticConfig(l2=0.0, max_iter=500))
        assert (m.predict(d.X) == d.y).all()

    def test_doubling_weights(self, synth):
        a = fit_logistic(synth)
        b = fit_logistic(synth.with_weights(2 * synth.weights))
        np.testing.assert_allclose(a.decision_function(synth.X), b.decision_function(synth.X), atol=1e-9)

    def test_replication_equals_weight(self, synth):
        rows = np.arange(0, 600, 7)
        rep, weighted = replicate(synth, 3, rows)
        cfg = LogisticConfig(tol=1e-10, max_iter=20000)
        a, b = fit_logistic(rep, cfg), fit_logistic(weighted, cfg)
        np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-6)
        assert a.intercept == pytest.approx(b.intercept, abs=1e-6)

    def test_gradient_matches_finite_differences(self, synth):
        m = fit_logistic(synth)
        Xs = (synth.X - m.center) / m.scale
        v = synth.weights / synth.weights.sum()
        rng = np.random.default_rng(0)
        theta_opt = np.concatenate([m.coefficients * m.scale, [m.intercept + m.coefficients @ m.center]])
        for theta in [theta_opt, theta_opt + rng.normal(0, 0.5, 3), rng.normal(0, 2, 3)]:
            _, g = logistic_objective(theta, Xs, synth.y.astype(float), v, m.l2)
            h = 1e-6
            fd = np.array([(logistic_objective(theta + h * e, Xs, synth.y.astype(float), v, m.l2)[0]
                            - logistic_objective(theta - h * e, Xs, synth.y.astype(float), v, m.l2)[0]) / (2 * h)
                           for e in np.eye(3)])
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)

    def test_converged_gradient_small(self, synth):
        m = fit_logistic(synth, LogisticConfig(tol=1e-8, max_iter=20000))
        assert m.converged
        Xs = (synth.X - m.center) / m.scale
        theta = np.concatenate([m.coefficients * m.scale, [m.intercept + m.coefficients @ m.center]])
        _, g = logistic_objective(theta, Xs, synth.y.astype(float), synth.weights / synth.n, m.l2)
        assert np.max(np.abs(g)) < 1e-7

    def test_loss_non_increasing(self, synth):
        m = fit_logistic(synth, LogisticConfig(max_iter=300))
        assert np.all(np.diff(m.loss_history) <= 0)

    def test_zero_model_tie_predicts_one(self):
        m = LogisticModel(np.zeros(3), 0.0, 0.5, 0.0)
        X = np.random.default_rng(1).normal(size=(10, 3))
        np.testing.assert_array_equal(m.predict_scores(X), 0.5)
        np.testing.assert_array_equal(m.predict(X), 1)

    def test_nonfinite_features(self):
        d = TabularDataset(np.array([[np.nan], [1.0]]), [0, 1], [0, 1])
        with pytest.raises(ValueError, match="non-finite"):
            fit_logistic(d)

    def test_dimension_mismatch(self, synth):
        with pytest.raises(ValueError):
            fit_logistic(synth).predict(np.zeros((2, 5)))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
    def test_scores_in_unit_interval(self, x):
        m = LogisticModel(np.array([3.0, -2.0, 50.0]), 1.0, 0.5, 0.0)
        sc = m.predict_scores(np.array([x]))
        assert 0.0 <= sc[0] <= 1.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LogisticConfig(threshold=1.0)
        with pytest.raises(ValueError):
            LogisticConfig(l2=-1)


def gini_oracle(X, y, w, min_leaf=1):
    """Best (feature, threshold) by exhaustive weighted Gini impurity decrease."""
    best, arg = -np.inf, None
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            t = (a + b) / 2
            left = X[:, j] <= t
            imp = 0.0
            for mask in (left, ~left):
                wt = w[mask].sum()
                p = (w[mask] * y[mask]).sum() / wt
                imp += wt * (1 - p * p - (1 - p) * (1 - p))
            if -imp > best + 1e-12:
                best, arg = -imp, (j, t)
    return arg


class TestForest:
    def test_one_class_constant(self, synth):
        d = TabularDataset(synth.X, np.ones(synth.n), synth.s)
        with pytest.warns(RuntimeWarning, match="single class"):
            f = fit_forest(d, ForestConfig(n_trees=5))
        np.testing.assert_array_equal(f.predict(synth.X), 1)

    def test_informative_binary_feature(self):
        rng = np.random.default_rng(4)
        n = 200
        X = rng.normal(size=(n, 4))
        X[:, 2] = rng.integers(0, 2, n)
        y = X[:, 2].astype(int)
        flip = rng.random(n) < 0.1
        y[flip] = 1 - y[flip]
        d = TabularDataset(X, y, rng.integers(0, 2, n))
        f = fit_forest(d, ForestConfig(n_trees=1, max_depth=1, features_per_split=4, bootstrap=False))
        assert f.feature[0] == 2
        assert f.threshold[0] == 0.5

    @pytest.mark.parametrize("seed", range(5))
    def test_root_split_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        X = np.round(rng.normal(size=(80, 3)), 1)
        y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(0, 0.5, 80) > 0).astype(float)
        w = rng.integers(1, 4, 80).astype(float)
        order = np.argsort(X, axis=0, kind="stable").T.copy()
        feat, thr, *_ = py_build_tree(X, y, w, order, 1, 1, 3, 123)
        assert (feat[0], thr[0]) == gini_oracle(X, y, w)

    def test_deterministic(self, synth):
        a = fit_forest(synth, ForestConfig(n_trees=10, seed=3))
        b = fit_forest(synth, ForestConfig(n_trees=10, seed=3))
        np.testing.assert_array_equal(a.predict_scores(synth.X), b.predict_scores(synth.X))
        np.testing.assert_array_equal(a.threshold, b.threshold)

    def test_vote_fraction_is_mean_of_trees(self, synth):
        f = fit_forest(synth, ForestConfig(n_trees=7, seed=1))
        X = synth.X[:50]
        votes = np.zeros(50)
        for t in range(f.n_trees):
            feat, thr, left, right, value = f.tree(t)
            for i in range(50):
                node = 0
                while left[node] >= 0:
                    node = left[node] if X[i, feat[node]] <= thr[node] else right[node]
                votes[i] += value[node] >= 0.5
        np.testing.assert_allclose(f.predict_scores(X), votes / f.n_trees, rtol=0, atol=1e-15)
        np.testing.assert_allclose(f.tree_predictions(X).mean(axis=0), votes / f.n_trees)

    def test_tie_vote_predicts_one(self, synth):
        f = fit_forest(synth, ForestConfig(n_trees=2, seed=0))
        sc = f.predict_scores(synth.X)
        assert np.all(f.predict(synth.X)[sc == 0.5] == 1)

    def test_trees_well_formed(self, synth):
        f = fit_forest(synth, ForestConfig(n_trees=5))
        for t in range(f.n_trees):
            feat, thr, left, right, value = f.tree(t)
            internal = left >= 0
            assert np.all((left >= 0) == (right >= 0))
            assert np.all(value >= 0) and np.all(value <= 1)
            assert np.all(feat[internal] >= 0)

    def test_replication_equals_weight_in_distribution(self):
        d = generate_imbalance(SyntheticImbalanceConfig(n=60, seed=7))
        rows = np.arange(0, 60, 3)
        rep, weighted = replicate(d, 3, rows)
        probe = d.X[:15]
        a = np.array([fit_forest(rep, ForestConfig(n_trees=1, seed=k)).predict_scores(probe) for k in range(200)])
        b = np.array([fit_forest(weighted, ForestConfig(n_trees=1, seed=k)).predict_scores(probe)
                      for k in range(200)])
        diff = a.mean(axis=0) - b.mean(axis=0)
        se = np.sqrt(a.var(axis=0, ddof=1) / 200 + b.var(axis=0, ddof=1) / 200)
        assert np.all(np.abs(diff) <= 3 * se + 1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ForestConfig(n_trees=0)


@pytest.mark.skipif(not HAS_EXT, reason="compiled extension not built")
class TestBackendEquivalence:
    def test_identical_forests(self, synth):
        a = fit_forest(synth, ForestConfig(n_trees=20, seed=5, backend="cython"))
        b = fit_forest(synth, ForestConfig(n_trees=20, seed=5, backend="python"))
        for name in ("feature", "threshold", "left", "right", "value", "offsets"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        np.testing.assert_array_equal(a.predict_scores(synth.X, backend="cython"),
                                      b.predict_scores(synth.X, backend="python"))

    def test_fractional_weights(self, synth):
        w = np.random.default_rng(0).uniform(0.2, 3.0, synth.n)
        cfg = dict(n_trees=3, seed=1, bootstrap=False, max_depth=6, min_samples_leaf=3)
        a = fit_forest(synth.with_weights(w), ForestConfig(backend="cython", **cfg))
        b = fit_forest(synth.with_weights(w), ForestConfig(backend="python", **cfg))
        np.testing.assert_array_equal(a.threshold, b.threshold)
        np.testing.assert_array_equal(a.value, b.value)


class TestSerialization:
    @pytest.mark.parametrize("kind", ["logistic", "forest"])
    def test_round_trip(self, synth, tmp_path, kind):
        m = fit_model(synth, make_config(kind, {"n_trees": 5} if kind == "forest" else {}, seed=1))
        p = tmp_path / "m.json"
        save_model(m, p)
        m2 = load_model(p)
        np.testing.assert_array_equal(predict_scores(m, synth.X), predict_scores(m2, synth.X))
        np.testing.assert_array_equal(predict(m, synth.X), predict(m2, synth.X))

    def test_version_checked(self, synth, tmp_path):
        p = tmp_path / "m.json"
        save_model(fit_logistic(synth), p)
        doc = json.loads(p.read_text())
        doc["version"] = 99
        p.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="version"):
            load_model(p)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_config("knn")
