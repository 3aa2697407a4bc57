import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uitboost import gbt
from uitboost.gbt import Hyperparams, Tree, TreeNode

from conftest import separable_matrix


def log_loss(labels, margins):
    labels = np.asarray(labels, dtype=float)
    margins = np.asarray(margins, dtype=float)
    return float(np.sum(np.logaddexp(0.0, margins) - labels * margins))


def enumerate_best_split(X, rows, cols, g, h, params):
    """Independent oracle: score every midpoint threshold with split_gain."""
    rows = sorted(int(r) for r in rows)
    best = None
    for c in sorted(int(c) for c in cols):
        rs = sorted(rows, key=lambda r: X[r, c])
        gtot = 0.0
        htot = 0.0
        for r in rs:
            gtot += g[r]
            htot += h[r]
        gl = 0.0
        hl = 0.0
        for t in range(len(rs) - 1):
            r = rs[t]
            gl += g[r]
            hl += h[r]
            v, v2 = X[r, c], X[rs[t + 1], c]
            if v == v2:
                continue
            hr = htot - hl
            if hl < params.min_child_hessian or hr < params.min_child_hessian:
                continue
            gain = gbt.split_gain(gl, hl, gtot - gl, hr, params.lam, params.gamma)
            if best is None or gain > best[2]:
                best = (c, 0.5 * (v + v2), gain)
    if best is None or best[2] <= 0.0:
        return None
    return best


class TestGradHess:
    def test_positive_label_at_zero_margin(self):
        pair = gbt.logloss_grad_hess(1, 0.0)
        assert pair.g == pytest.approx(-0.5)
        assert pair.h == pytest.approx(0.25)

    def test_negative_label_symmetry(self):
        pair = gbt.logloss_grad_hess(0, 0.0)
        assert pair.g == pytest.approx(0.5)
        assert pair.h == pytest.approx(0.25)

    def test_saturation(self):
        pair = gbt.logloss_grad_hess(1, 35.0)
        assert abs(pair.g) < 1e-12
        assert pair.h < 1e-12

    def test_non_finite_margin_rejected(self):
        with pytest.raises(ValueError):
            gbt.logloss_grad_hess(1, math.inf)

    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(123)
        labels = rng.integers(0, 2, size=1000)
        margins = rng.uniform(-20, 20, size=1000)
        eps = 1e-4

        def loss(m):
            return np.logaddexp(0.0, m) - labels * m

        g_fd = (loss(margins + eps) - loss(margins - eps)) / (2 * eps)
        h_fd = (loss(margins + eps) - 2 * loss(margins) + loss(margins - eps)) / eps**2
        for i in range(1000):
            pair = gbt.logloss_grad_hess(int(labels[i]), float(margins[i]))
            assert pair.g == pytest.approx(g_fd[i], abs=1e-6)
            assert pair.h == pytest.approx(h_fd[i], abs=1e-6)

    @given(
        label=st.integers(0, 1),
        margin=st.floats(-30, 30, allow_nan=False),
    )
    @settings(max_examples=200, deadline=None)
    def test_bounds(self, label, margin):
        pair = gbt.logloss_grad_hess(label, margin)
        assert abs(pair.g) <= 1.0
        assert 0.0 < pair.h <= 0.25


class TestClosedForms:
    def test_leaf_weight_hand_value(self):
        assert gbt.leaf_weight(-0.5, 0.25, 1.0) == pytest.approx(0.4)

    def test_leaf_weight_zero_gradient(self):
        assert gbt.leaf_weight(0.0, 0.3, 0.7) == 0.0

    def test_leaf_weight_large_penalty_shrinks(self):
        assert abs(gbt.leaf_weight(-2.0, 0.25, 1e9)) < 1e-8

    def test_leaf_weight_degenerate_denominator(self):
        with pytest.raises(ValueError):
            gbt.leaf_weight(1.0, 0.0, 0.0)

    def test_split_gain_hand_value(self):
        assert gbt.split_gain(-0.5, 0.25, 0.5, 0.25, 0.0, 0.0) == pytest.approx(1.0)

    def test_identical_children_gain_is_minus_gamma(self):
        # with lam=0 the parent term cancels the children exactly
        for gamma in (0.0, 1.5):
            gain = gbt.split_gain(0.3, 0.2, 0.3, 0.2, 0.0, gamma)
            assert gain == pytest.approx(-gamma, abs=1e-12)

    def test_gamma_is_pure_subtraction(self):
        base = gbt.split_gain(-0.5, 0.25, 0.5, 0.25, 0.0, 0.0)
        assert gbt.split_gain(-0.5, 0.25, 0.5, 0.25, 0.0, 2.0) == pytest.approx(base - 2.0)


class TestFindBestSplit:
    def params(self, **kw):
        defaults = dict(lam=0.0, gamma=0.0, min_child_hessian=0.0)
        defaults.update(kw)
        return Hyperparams(**defaults)

    def test_one_dimensional_example(self):
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        g = np.array([0.5, 0.5, -0.5, -0.5])
        h = np.full(4, 0.25)
        choice = gbt.find_best_split(X, [0, 1, 2, 3], [0], (g, h), self.params())
        assert choice.feature == 0
        assert choice.threshold == 2.5

    def test_identical_values_give_no_split(self):
        X = np.full((5, 1), 3.0)
        g = np.array([0.5, -0.5, 0.5, -0.5, 0.5])
        h = np.full(5, 0.25)
        assert gbt.find_best_split(X, range(5), [0], (g, h), self.params()) is None

    def test_gamma_above_best_gain_prunes(self):
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        g = np.array([0.5, 0.5, -0.5, -0.5])
        h = np.full(4, 0.25)
        assert (
            gbt.find_best_split(X, range(4), [0], (g, h), self.params(gamma=50.0)) is None
        )

    def test_tie_breaks_to_lowest_feature(self):
        col = np.array([1.0, 2.0, 3.0, 4.0])
        X = np.column_stack([col, col])
        g = np.array([0.5, 0.5, -0.5, -0.5])
        h = np.full(4, 0.25)
        choice = gbt.find_best_split(X, range(4), [1, 0], (g, h), self.params())
        assert choice.feature == 0

    def test_tie_breaks_to_lowest_threshold(self):
        # symmetric gradients: splits at 0.5 and 2.5 carry identical gain
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        g = np.array([0.5, -0.5, -0.5, 0.5])
        h = np.full(4, 0.25)
        choice = gbt.find_best_split(X, range(4), [0], (g, h), self.params())
        assert choice.threshold == 0.5

    @given(
        n=st.integers(2, 32),
        m=st.integers(1, 4),
        tie_heavy=st.booleans(),
        seed=st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=120, deadline=None)
    def test_matches_enumeration_oracle_exactly(self, n, m, tie_heavy, seed):
        rng = np.random.default_rng(seed)
        if tie_heavy:
            X = rng.integers(0, 4, size=(n, m)).astype(float)
        else:
            X = rng.uniform(-10, 10, size=(n, m))
        g = rng.uniform(-1, 1, size=n)
        h = rng.uniform(1e-3, 0.25, size=n)
        params = self.params(lam=float(rng.uniform(0, 2)), gamma=float(rng.uniform(0, 0.5)))
        expected = enumerate_best_split(X, range(n), range(m), g, h, params)
        actual = gbt.find_best_split(X, range(n), range(m), (g, h), params)
        if expected is None:
            assert actual is None
        else:
            assert (actual.feature, actual.threshold, actual.gain) == expected


class TestBuildTree:
    def test_depth_zero_single_leaf(self):
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        g = np.array([0.5, 0.5, -0.5, -0.5])
        h = np.full(4, 0.25)
        params = Hyperparams(max_depth=0, lam=0.5)
        tree = gbt.build_tree(X, range(4), (g, h), params, np.random.default_rng(0))
        assert tree.leaf_count == 1
        assert tree.root.is_leaf
        assert tree.root.weight == pytest.approx(gbt.leaf_weight(0.0, 1.0, 0.5))

    def test_stump_reproduces_split_choice(self):
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        g = np.array([0.5, 0.5, -0.5, -0.5])
        h = np.full(4, 0.25)
        params = Hyperparams(max_depth=1, lam=0.0, min_child_hessian=0.0)
        tree = gbt.build_tree(X, range(4), (g, h), params, np.random.default_rng(0))
        choice = gbt.find_best_split(X, range(4), [0], (g, h), params)
        assert tree.root.feature_index == choice.feature
        assert tree.root.threshold == choice.threshold
        assert tree.split_gains == [(choice.feature, choice.gain)]
        # leaf weights from each side's statistics
        assert tree.root.left.weight == pytest.approx(gbt.leaf_weight(1.0, 0.5, 0.0))
        assert tree.root.right.weight == pytest.approx(gbt.leaf_weight(-1.0, 0.5, 0.0))

    def test_deterministic_under_seed(self):
        X, y = separable_matrix(n=60, m=4, seed=5)
        g = 0.5 - y.astype(float)
        h = np.full(60, 0.25)
        params = Hyperparams(max_depth=4, col_sample=0.5)
        t1 = gbt.build_tree(X, range(60), (g, h), params, np.random.default_rng(42))
        t2 = gbt.build_tree(X, range(60), (g, h), params, np.random.default_rng(42))
        assert np.array_equal(t1.feat, t2.feat)
        assert np.array_equal(t1.thr, t2.thr)
        assert np.array_equal(t1.weight, t2.weight)


class TestTrain:
    def test_symmetric_data_stays_at_base(self):
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        y = np.array([1, 0, 1, 0])
        params = Hyperparams(ntrees=1, eta=1.0, max_depth=0, lam=0.0, base_score=0.5)
        model = gbt.train(X, y, params)
        np.testing.assert_allclose(gbt.predict_proba(model, X), 0.5, atol=1e-15)

    def test_planted_signal_high_train_accuracy(self):
        X, y = separable_matrix(n=400, m=12, separation=1.5, seed=9)
        params = Hyperparams(ntrees=60, eta=0.3, max_depth=5, lam=1.0, seed=2)
        model = gbt.train(X, y, params)
        acc = float(np.mean(gbt.classify(model, X) == y))
        assert acc >= 0.99

    def test_training_loss_non_increasing_under_full_sampling(self):
        X, y = separable_matrix(n=150, m=5, separation=1.0, seed=3)
        params = Hyperparams(
            ntrees=30, eta=0.5, max_depth=3, gamma=0.0, lam=0.0, seed=7
        )
        model = gbt.train(X, y, params)
        margins = np.full(len(y), math.log(0.5 / 0.5))
        losses = [log_loss(y, margins)]
        for tree in model.trees:
            psum = np.zeros(len(y))
            tree.predict_sum(X, psum)
            margins = margins + params.eta * psum
            losses.append(log_loss(y, margins))
        diffs = np.diff(losses)
        assert np.all(diffs <= 1e-9)

    def test_objective_non_increasing_matches_loss_when_unregularized(self):
        X, y = separable_matrix(n=100, m=4, seed=11)
        params = Hyperparams(ntrees=10, eta=0.3, max_depth=3, gamma=0.0, lam=0.0, seed=1)
        model = gbt.train(X, y, params)
        obj = gbt.evaluate_objective(model, X, y, params)
        assert obj == pytest.approx(log_loss(y, gbt.predict_margin(model, X)), abs=1e-9)

    def test_single_class_rejected(self):
        X = np.ones((4, 2))
        with pytest.raises(ValueError):
            gbt.train(X, np.ones(4), Hyperparams())

    def test_determinism_bit_identical_serialization(self):
        X, y = separable_matrix(n=120, m=6, seed=8)
        params = Hyperparams(
            ntrees=12, eta=0.2, max_depth=6, row_sample=0.7, col_sample=0.6, seed=99
        )
        a = gbt.dumps_model(gbt.train(X, y, params))
        b = gbt.dumps_model(gbt.train(X, y, params))
        assert a == b

    @pytest.mark.slow
    def test_full_scale_planted_signal_memorized(self):
        # the tuned-model regime: hundreds of shallow-ish trees at a small
        # learning rate drive the training error to zero on separable data
        from uitboost.harness import SyntheticSpec, generate_synthetic
        from uitboost.preprocess import Preprocessor

        table = generate_synthetic(SyntheticSpec(seed=6))
        prep = Preprocessor().fit(table, np.arange(table.n_rows))
        X = prep.transform(table)
        params = Hyperparams(ntrees=500, eta=0.03, max_depth=16, lam=1.0, seed=4)
        model = gbt.train(X, table.labels, params)
        acc = float(np.mean(gbt.classify(model, X) == table.labels))
        assert acc >= 0.99

    def test_accepted_splits_positive_gain_and_depth_cap(self):
        X, y = separable_matrix(n=200, m=6, seed=4)
        params = Hyperparams(ntrees=8, eta=0.3, max_depth=3, gamma=0.1, seed=5)
        model = gbt.train(X, y, params)
        for tree in model.trees:
            assert tree.depth <= 3
            for _, gain in tree.split_gains:
                assert gain > 0.0


class TestEvaluateObjective:
    def test_empty_ensemble_is_base_log_loss(self):
        X = np.zeros((4, 1))
        y = np.array([1, 0, 1, 0])
        params = Hyperparams(ntrees=0, base_score=0.5)
        model = gbt.BoostedModel(base_score=0.5, eta=0.1, trees=[], feature_names=("x",))
        assert gbt.evaluate_objective(model, X, y, params) == pytest.approx(
            4 * math.log(2.0), abs=1e-12
        )

    def test_zero_weight_leaf_tree_adds_exactly_gamma(self):
        X = np.zeros((4, 1))
        y = np.array([1, 0, 1, 0])
        model = gbt.BoostedModel(base_score=0.5, eta=0.1, trees=[], feature_names=("x",))
        params = Hyperparams(gamma=1.0, lam=3.0)
        before = gbt.evaluate_objective(model, X, y, params)
        model.trees.append(Tree.from_root(TreeNode(weight=0.0)))
        after = gbt.evaluate_objective(model, X, y, params)
        assert after - before == 1.0

    def test_penalty_accounting(self):
        leaf_l = TreeNode(weight=0.5)
        leaf_r = TreeNode(weight=-0.25)
        root = TreeNode(feature_index=0, threshold=0.0, left=leaf_l, right=leaf_r, gain=1.0)
        model = gbt.BoostedModel(base_score=0.5, eta=1.0, trees=[Tree.from_root(root)], feature_names=("x",))
        X = np.zeros((2, 1))
        y = np.array([1, 0])
        params = Hyperparams(gamma=2.0, lam=4.0)
        obj = gbt.evaluate_objective(model, X, y, params)
        margins = gbt.predict_margin(model, X)
        expected_penalty = 2.0 * 2 + 0.5 * 4.0 * (0.5**2 + 0.25**2)
        assert obj == pytest.approx(log_loss(y, margins) + expected_penalty, abs=1e-12)


class TestPredict:
    def test_empty_ensemble_probability_is_base(self):
        model = gbt.BoostedModel(base_score=0.7, eta=0.1, trees=[], feature_names=("a", "b"))
        X = np.zeros((3, 2))
        np.testing.assert_allclose(gbt.predict_proba(model, X), 0.7, atol=1e-12)

    def test_stump_orders_classes_correctly(self):
        X = np.array([[1.0], [2.0], [3.0], [4.0]])
        y = np.array([0, 0, 1, 1])
        model = gbt.train(X, y, Hyperparams(ntrees=1, eta=1.0, max_depth=1, lam=0.0))
        proba = gbt.predict_proba(model, X)
        assert proba[0] < proba[2]
        assert proba[1] < proba[3]
        labels = gbt.classify(model, X)
        np.testing.assert_array_equal(labels, y)

    def test_arity_mismatch_rejected(self):
        model = gbt.BoostedModel(base_score=0.5, eta=0.1, trees=[], feature_names=("a",))
        with pytest.raises(ValueError):
            gbt.predict_margin(model, np.zeros((2, 3)))

    def test_serialize_roundtrip_bit_exact_margins(self):
        X, y = separable_matrix(n=80, m=5, seed=17)
        model = gbt.train(X, y, Hyperparams(ntrees=7, max_depth=4, seed=3))
        clone = gbt.loads_model(gbt.dumps_model(model))
        assert np.array_equal(gbt.predict_margin(model, X), gbt.predict_margin(clone, X))
        assert gbt.dumps_model(clone) == gbt.dumps_model(model)


class TestEarlyStopping:
    def test_infinite_patience_trains_all_rounds(self):
        X, y = separable_matrix(n=100, m=4, seed=2)
        Xv, yv = separable_matrix(n=40, m=4, seed=3)
        params = Hyperparams(ntrees=15, eta=0.2, max_depth=3, seed=1)
        unlimited = gbt.train(X, y, params, eval_set=(Xv, yv), patience=math.inf)
        tracked = gbt.train(X, y, params, eval_set=(Xv, yv))
        assert unlimited.ntrees == 15
        assert unlimited.eval_history == tracked.eval_history

    def test_finite_patience_keeps_best_round(self):
        X, y = separable_matrix(n=120, m=4, separation=2.0, seed=6)
        Xv, yv = separable_matrix(n=60, m=4, separation=2.0, seed=7)
        params = Hyperparams(ntrees=200, eta=0.3, max_depth=3, seed=4)
        model = gbt.train(X, y, params, eval_set=(Xv, yv), patience=5)
        assert model.ntrees == model.best_round
        assert model.ntrees < 200
        assert max(model.eval_history) == model.eval_history[model.best_round - 1]

    def test_patience_without_eval_set_rejected(self):
        X, y = separable_matrix(n=30, m=2, seed=1)
        with pytest.raises(ValueError):
            gbt.train(X, y, Hyperparams(), patience=5)
