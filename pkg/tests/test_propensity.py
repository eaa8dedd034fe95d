"""Weighted CART + SAMME boosting: splits, stopping, scores, persistence."""

from __future__ import annotations

import numpy as np
import pytest

from feedshift.propensity import (
    BoostedEnsemble,
    PropensityError,
    covariate_schema_hash,
    fit_adaboost,
    fit_tree,
    load_model,
    predict_score,
    save_model,
    score_matrix,
)


def _xor_data(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, 2))
    y = ((X[:, 0] * X[:, 1]) > 0).astype(int)
    return X, y


class TestFitTree:
    def test_pure_labels_single_leaf(self):
        X = np.array([[0.0], [1.0], [2.0]])
        tree = fit_tree(X, [0, 0, 0])
        assert tree.root.is_leaf
        assert tree.root.label == 0

    def test_perfect_split_at_midpoint(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        tree = fit_tree(X, [0, 0, 1, 1])
        assert tree.root.feature == 0
        assert tree.root.threshold == 1.5
        assert tree.predict(X).tolist() == [0, 0, 1, 1]

    def test_constant_feature_never_selected(self):
        rng = np.random.default_rng(3)
        informative = rng.uniform(size=50)
        X = np.column_stack([np.full(50, 7.0), informative])
        y = (informative > 0.5).astype(int)
        tree = fit_tree(X, y)
        seen = set()

        def walk(node):
            if not node.is_leaf:
                seen.add(node.feature)
                walk(node.left)
                walk(node.right)

        walk(tree.root)
        assert 0 not in seen

    def test_depth_limit_respected(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(size=(200, 3))
        y = rng.integers(0, 2, size=200)

        def depth(node):
            if node.is_leaf:
                return 0
            return 1 + max(depth(node.left), depth(node.right))

        for max_depth in (1, 2, 3):
            tree = fit_tree(X, y, max_depth=max_depth)
            assert depth(tree.root) <= max_depth

    def test_weighted_error_beats_majority_leaf(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            X = rng.uniform(size=(80, 4))
            y = rng.integers(0, 2, size=80)
            w = rng.uniform(0.1, 1.0, size=80)
            w = w / w.sum()
            tree = fit_tree(X, y, w)
            err_tree = float(np.sum(w[tree.predict(X) != y]))
            majority = 0 if np.sum(w[y == 0]) >= np.sum(w[y == 1]) else 1
            err_leaf = float(np.sum(w[y != majority]))
            assert err_tree <= err_leaf + 1e-12

    def test_invalid_weights_rejected(self):
        X = np.array([[0.0], [1.0]])
        with pytest.raises(PropensityError):
            fit_tree(X, [0, 1], w=[0.9, 0.9])
        with pytest.raises(PropensityError):
            fit_tree(X, [0, 1], w=[-0.5, 1.5])

    def test_empty_input_rejected(self):
        with pytest.raises(PropensityError):
            fit_tree(np.empty((0, 2)), [])

    def test_leaf_tie_goes_to_class_zero(self):
        X = np.array([[1.0], [1.0]])
        tree = fit_tree(X, [0, 1])
        assert tree.root.is_leaf
        assert tree.root.label == 0


class TestFitAdaboost:
    def test_separable_stops_after_first_round(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        ens = fit_adaboost(X, [0, 0, 1, 1], n_estimators=50)
        assert len(ens.trees) == 1
        assert ens.alphas[0] == pytest.approx(0.05 * np.log(1.0 / 1e-12))

    def test_single_class_rejected(self):
        with pytest.raises(PropensityError, match="degenerate labels"):
            fit_adaboost(np.array([[0.0], [1.0]]), [1, 1])

    def test_coin_labels_near_chance(self):
        rng = np.random.default_rng(42)
        X = rng.uniform(size=(2000, 5))
        y = rng.integers(0, 2, size=2000)
        ens = fit_adaboost(X[:1000], y[:1000], n_estimators=30)
        held_pred = (score_matrix(ens, X[1000:]) >= 0.5).astype(int)
        acc = float(np.mean(held_pred == y[1000:]))
        assert 0.47 <= acc <= 0.53

    def test_xor_reaches_95_within_50_rounds(self):
        X, y = _xor_data(2000, seed=7)
        ens = fit_adaboost(X, y, n_estimators=50)
        pred = (score_matrix(ens, X) >= 0.5).astype(int)
        assert float(np.mean(pred == y)) >= 0.95

    def test_bitwise_deterministic(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(size=(300, 4))
        y = (X[:, 0] + 0.2 * rng.standard_normal(300) > 0.5).astype(int)
        a = fit_adaboost(X, y, n_estimators=20)
        b = fit_adaboost(X, y, n_estimators=20)
        assert a.alphas == b.alphas
        assert score_matrix(a, X).tobytes() == score_matrix(b, X).tobytes()


class TestPredictScore:
    def _stub_tree(self, label):
        X = np.array([[0.0], [1.0]])
        return fit_tree(X, [label, label])

    def test_single_tree_unanimous(self):
        ens = BoostedEnsemble(trees=[self._stub_tree(1)], alphas=[2.0])
        assert predict_score(ens, np.array([0.5])) == 1.0

    def test_equal_alpha_opposite_votes(self):
        ens = BoostedEnsemble(
            trees=[self._stub_tree(1), self._stub_tree(0)], alphas=[1.0, 1.0]
        )
        assert predict_score(ens, np.array([0.5])) == 0.5

    def test_weighted_vote_three_quarters(self):
        ens = BoostedEnsemble(
            trees=[self._stub_tree(1), self._stub_tree(0)], alphas=[3.0, 1.0]
        )
        assert predict_score(ens, np.array([0.5])) == pytest.approx(0.75)

    def test_zero_total_alpha_gives_half(self):
        ens = BoostedEnsemble(trees=[self._stub_tree(1)], alphas=[0.0])
        assert predict_score(ens, np.array([0.5])) == 0.5

    def test_scores_always_in_unit_interval(self, rng):
        X = rng.uniform(size=(400, 3))
        y = (X[:, 0] > 0.5).astype(int)
        y[:40] = 1 - y[:40]
        ens = fit_adaboost(X, y, n_estimators=25)
        scores = score_matrix(ens, rng.uniform(size=(100, 3)))
        assert np.all(scores >= 0.0) and np.all(scores <= 1.0)

    def test_dimension_mismatch_rejected(self):
        ens = BoostedEnsemble(trees=[self._stub_tree(1)], alphas=[1.0])
        with pytest.raises(PropensityError, match="dimension"):
            predict_score(ens, np.array([0.5, 0.5]))


def _auc_bruteforce(scores_pos, scores_neg):
    wins = 0.0
    for sp in scores_pos:
        for sn in scores_neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(scores_pos) * len(scores_neg))


def test_logistic_cohort_auc_at_least_09():
    rng = np.random.default_rng(2024)
    n = 5000
    X = rng.standard_normal((n, 6))
    p = 1.0 / (1.0 + np.exp(-3.0 * X[:, 0]))
    y = (rng.uniform(size=n) < p).astype(int)
    ens = fit_adaboost(X, y, n_estimators=40)
    scores = score_matrix(ens, X)
    # brute-force pair counting on a fixed subsample keeps this O(n^2)
    # oracle affordable while still independent of any ranking library
    idx = rng.permutation(n)[:1500]
    pos = scores[idx][y[idx] == 1]
    neg = scores[idx][y[idx] == 0]
    assert _auc_bruteforce(pos, neg) >= 0.9


class TestSerialization:
    def test_roundtrip_preserves_scores(self, tmp_path, rng):
        X = rng.uniform(size=(200, 3))
        y = (X[:, 1] > 0.4).astype(int)
        ens = fit_adaboost(X, y, n_estimators=10, schema_hash="abc123")
        path = tmp_path / "model.json"
        save_model(ens, path)
        again = load_model(path)
        assert again.alphas == ens.alphas
        assert score_matrix(again, X).tobytes() == score_matrix(ens, X).tobytes()

    def test_schema_hash_enforced(self, tmp_path):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        ens = fit_adaboost(X, [0, 0, 1, 1], n_estimators=5,
                           schema_hash=covariate_schema_hash(["a"]))
        path = tmp_path / "model.json"
        save_model(ens, path)
        load_model(path, expect_schema_hash=covariate_schema_hash(["a"]))
        with pytest.raises(PropensityError, match="schema"):
            load_model(path, expect_schema_hash=covariate_schema_hash(["b"]))
