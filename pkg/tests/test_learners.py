import numpy as np
import pytest

from boxsieve.learners import (
    LEARNER_KINDS,
    FittedLearner,
    LearnerSpec,
    predict,
    predict_batch,
    random_spec,
    train,
)


def two_clusters(n_per_class=20, dim=12, gap=5.0, seed=0):
    """Linearly separable clusters centered at -gap and +gap on every axis."""
    rng = np.random.default_rng(seed)
    pos = rng.normal(gap, 1.0, size=(n_per_class, dim))
    neg = rng.normal(-gap, 1.0, size=(n_per_class, dim))
    X = np.vstack([pos, neg])
    y = np.array([1] * n_per_class + [-1] * n_per_class)
    return X, y


class TestRandomSpec:
    def test_deterministic_given_state(self):
        a = random_spec(np.random.default_rng(123))
        b = random_spec(np.random.default_rng(123))
        assert a == b

    def test_family_frequencies(self):
        rng = np.random.default_rng(0)
        draws = [random_spec(rng).kind for _ in range(10_000)]
        for kind in LEARNER_KINDS:
            assert abs(draws.count(kind) / 10_000 - 0.25) < 0.02

    def test_knn_k_odd_in_range(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            spec = random_spec(rng)
            if spec.kind == "knn":
                k = spec.hyper("k")
                assert 1 <= k <= 25 and k % 2 == 1

    def test_tree_ranges(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            spec = random_spec(rng)
            if spec.kind == "tree":
                assert 2 <= spec.hyper("max_depth") <= 8
                assert 1 <= spec.hyper("min_leaf") <= 10

    def test_svm_lambda_range(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            spec = random_spec(rng)
            if spec.kind == "linear_svm":
                assert 1e-4 <= spec.hyper("reg_lambda") <= 1.0

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            LearnerSpec(kind="forest", hyperparams=(), spec_seed=0)


class TestLda:
    def test_separable_clusters_perfect_training_accuracy(self):
        X, y = two_clusters()
        model = train(LearnerSpec("lda", (), 0), X, y)
        np.testing.assert_array_equal(predict_batch(model, X), y)

    def test_zero_vector_with_positive_offset(self):
        model = FittedLearner(
            spec=LearnerSpec("lda", (), 0),
            params={"weights": np.ones(12), "offset": 0.5},
        )
        assert predict(model, np.zeros(12)) == 1

    def test_mirror_symmetry(self):
        # Dataset symmetric under x -> -x with flipped labels: the decision
        # function is odd away from the boundary.
        rng = np.random.default_rng(4)
        pos = rng.normal(2.0, 1.0, size=(30, 4))
        X = np.vstack([pos, -pos])
        y = np.array([1] * 30 + [-1] * 30)
        model = train(LearnerSpec("lda", (), 0), X, y)
        probes = rng.normal(0.0, 3.0, size=(50, 4))
        scores = probes @ model.params["weights"] + model.params["offset"]
        probes = probes[np.abs(scores) > 1e-9]
        flipped = -predict_batch(model, -probes)
        np.testing.assert_array_equal(predict_batch(model, probes), flipped)

    def test_constant_feature_handled_by_ridge(self):
        X, y = two_clusters(dim=4)
        X[:, 2] = 1.0  # zero-variance column
        model = train(LearnerSpec("lda", (), 0), X, y)
        assert np.isfinite(model.params["weights"]).all()


class TestTree:
    def test_xor_layout_depth_two(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([1, 1, -1, -1])
        spec = LearnerSpec("tree", (("max_depth", 2), ("min_leaf", 1)), 0)
        model = train(spec, X, y)
        np.testing.assert_array_equal(predict_batch(model, X), y)

    def test_single_leaf_constant_prediction(self):
        model = FittedLearner(
            spec=LearnerSpec("tree", (("max_depth", 2), ("min_leaf", 1)), 0),
            params={
                "feature": np.array([-1]),
                "threshold": np.array([0.0]),
                "left": np.array([-1]),
                "right": np.array([-1]),
                "label": np.array([1]),
            },
        )
        rng = np.random.default_rng(5)
        assert all(predict(model, x) == 1 for x in rng.normal(size=(10, 12)))

    def test_accuracy_non_decreasing_in_depth(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(120, 5))
        y = np.where(np.sin(X[:, 0] * 2) + X[:, 1] > 0, 1, -1)
        accs = []
        for depth in range(2, 9):
            spec = LearnerSpec("tree", (("max_depth", depth), ("min_leaf", 1)), 0)
            model = train(spec, X, y)
            accs.append((predict_batch(model, X) == y).mean())
        assert all(b >= a - 1e-12 for a, b in zip(accs, accs[1:]))

    def test_min_leaf_respected(self):
        X, y = two_clusters(n_per_class=10, dim=3)
        spec = LearnerSpec("tree", (("max_depth", 8), ("min_leaf", 4)), 0)
        model = train(spec, X, y)
        # Count rows reaching each leaf; all leaves must hold >= min_leaf.
        leaves = {}
        feature = model.params["feature"]
        threshold = model.params["threshold"]
        left, right = model.params["left"], model.params["right"]
        for row in X:
            node = 0
            while feature[node] != -1:
                node = left[node] if row[feature[node]] < threshold[node] else right[node]
            leaves[node] = leaves.get(node, 0) + 1
        assert min(leaves.values()) >= 4


class TestKnn:
    def test_k1_memorizes_training_set(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(30, 12))
        y = np.where(rng.random(30) > 0.5, 1, -1)
        y[0] = 1
        y[1] = -1
        model = train(LearnerSpec("knn", (("k", 1),), 0), X, y)
        np.testing.assert_array_equal(predict_batch(model, X), y)

    def test_majority_vote(self):
        X = np.array([[0.0], [0.1], [0.2], [10.0], [10.1]])
        y = np.array([1, 1, 1, -1, -1])
        model = train(LearnerSpec("knn", (("k", 3),), 0), X, y)
        assert predict(model, np.array([0.05])) == 1
        assert predict(model, np.array([10.05])) == -1


class TestSvm:
    def test_separable_clusters_generalize(self):
        X, y = two_clusters(seed=8)
        spec = LearnerSpec(
            "linear_svm", (("epochs", 50), ("reg_lambda", 0.01)), spec_seed=42
        )
        model = train(spec, X, y)
        fresh_X, fresh_y = two_clusters(n_per_class=25, seed=99)
        np.testing.assert_array_equal(predict_batch(model, fresh_X), fresh_y)

    def test_deterministic_given_spec_seed(self):
        X, y = two_clusters(seed=9)
        spec = LearnerSpec("linear_svm", (("epochs", 50), ("reg_lambda", 0.1)), 7)
        a = train(spec, X, y)
        b = train(spec, X, y)
        np.testing.assert_array_equal(a.params["weights"], b.params["weights"])
        assert a.params["offset"] == b.params["offset"]


class TestContract:
    def test_single_class_rejected(self):
        X = np.zeros((5, 3))
        with pytest.raises(ValueError):
            train(LearnerSpec("lda", (), 0), X, np.ones(5))

    def test_non_finite_rejected(self):
        X = np.zeros((4, 3))
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            train(LearnerSpec("lda", (), 0), X, np.array([1, -1, 1, -1]))
        model = train(LearnerSpec("knn", (("k", 1),), 0), np.eye(3), np.array([1, -1, 1]))
        with pytest.raises(ValueError):
            predict(model, np.array([np.inf, 0.0, 0.0]))

    def test_train_is_pure(self):
        X, y = two_clusters(dim=4, seed=10)
        spec = LearnerSpec("tree", (("max_depth", 4), ("min_leaf", 2)), 3)
        a = train(spec, X, y)
        b = train(spec, X, y)
        for key in a.params:
            np.testing.assert_array_equal(a.params[key], b.params[key])

    def test_predictions_are_total_on_all_kinds(self):
        X, y = two_clusters(dim=12, seed=11)
        rng = np.random.default_rng(12)
        probes = rng.normal(scale=20.0, size=(40, 12))
        specs = [
            LearnerSpec("lda", (), 0),
            LearnerSpec("tree", (("max_depth", 3), ("min_leaf", 1)), 0),
            LearnerSpec("knn", (("k", 5),), 0),
            LearnerSpec("linear_svm", (("epochs", 50), ("reg_lambda", 0.05)), 1),
        ]
        for spec in specs:
            labels = predict_batch(train(spec, X, y), probes)
            assert set(np.unique(labels)).issubset({-1, 1})
