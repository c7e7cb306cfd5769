import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epsfdd.classify import (
    ClassifyConfig,
    DecisionTree,
    LabeledDataset,
    MlpClassifier,
    TreeNode,
    comparison_table,
    confusion_matrix,
    entropy,
    evaluate,
    id3_predict,
    id3_train,
    kfold_loss,
    knn_fit,
    knn_predict,
    knn_select_k,
    mlp_classifier_predict,
    mlp_classifier_train,
    pca_classify,
    pca_fit,
    pca_project,
    pca_train,
    resubstitution_loss,
    split_candidates,
    stratified_folds,
)
from epsfdd.eps_plant import EPS_CLASSES, PV_CLASSES, FaultKind
from epsfdd.errors import DataError, LabelError, ShapeError, StateError
from epsfdd.sysid import MlpRegressor, TrainConfig

A, B, C = PV_CLASSES


def blobs(rng, n_per=40, centers=((0, 0), (3, 3), (0, 4)), spread=1.0):
    x = np.vstack([rng.normal(c, spread, size=(n_per, 2)) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per)
    return LabeledDataset(x, y, PV_CLASSES[: len(centers)])


def knn_oracle(points, labels, q, k, n_cls):
    d = [math.sqrt(sum((a - b) ** 2 for a, b in zip(p, q))) for p in points]
    nearest = sorted(range(len(points)), key=lambda i: (d[i], i))[:k]
    votes = [0] * n_cls
    sums = [0.0] * n_cls
    for i in nearest:
        votes[labels[i]] += 1
        sums[labels[i]] += d[i]
    top = max(votes)
    cands = [c for c in range(n_cls) if votes[c] == top]
    return min(cands, key=lambda c: (sums[c], c))


class TestLabeledDataset:
    def test_from_kinds_rejects_foreign_label(self):
        with pytest.raises(LabelError):
            LabeledDataset.from_kinds(np.zeros((1, 2)), [FaultKind.RegIgbtOpen], PV_CLASSES)

    def test_row_label_mismatch(self):
        with pytest.raises(ShapeError):
            LabeledDataset(np.zeros((3, 2)), [0, 1], PV_CLASSES)


class TestMlpClassifier:
    def test_separable_clouds(self):
        data = blobs(np.random.default_rng(0), centers=((0, 0), (10, 10)), spread=0.5)
        clf = mlp_classifier_train(data, TrainConfig(n_hidden=4))
        assert resubstitution_loss(clf, data) == 0.0

    def test_argmax_and_tie(self):
        def fixed(bias):
            core = MlpRegressor(np.zeros((1, 2)), np.column_stack([np.zeros(len(bias)), bias]),
                                np.array([[0.0, 1.0]]), np.tile([0.0, 1.0], (len(bias), 1)))
            return MlpClassifier(core, PV_CLASSES[: len(bias)])

        assert mlp_classifier_predict(fixed([0.1, 0.9, 0.0]), np.zeros((1, 1))) == [B]
        assert mlp_classifier_predict(fixed([0.5, 0.5]), np.zeros((1, 1))) == [A]

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            mlp_classifier_train(LabeledDataset(np.zeros((20, 2)), np.zeros(20), PV_CLASSES), TrainConfig())

    def test_predict_reproduces_training_confusion(self):
        data = blobs(np.random.default_rng(1), spread=1.5)
        cfg = TrainConfig(max_epochs=40, seed=3)
        a = mlp_classifier_train(data, cfg).predict(data.features)
        b = mlp_classifier_train(data, cfg).predict(data.features)
        assert np.array_equal(a, b)

    def test_feature_scaling_invariance(self):
        data = blobs(np.random.default_rng(2), spread=1.2)
        cfg = TrainConfig(max_epochs=40)
        base = mlp_classifier_train(data, cfg).predict(data.features)
        scaled = LabeledDataset(data.features * 4.0, data.labels, data.class_order)
        assert np.array_equal(mlp_classifier_train(scaled, cfg).predict(scaled.features), base)


class TestKnn:
    def test_self_query_k1(self):
        data = blobs(np.random.default_rng(3))
        clf = knn_fit(data, 1)
        assert knn_predict(clf, data.features[17]) == data.class_order[data.labels[17]]

    def test_three_four_five(self):
        data = LabeledDataset(np.array([[3.0, 4.0], [0.0, 6.0]]), [0, 1], PV_CLASSES)
        assert knn_predict(knn_fit(data, 1), [0.0, 0.0]) == A  # 5 beats 6

    def test_distance_tie_uses_stored_order(self):
        data = LabeledDataset(np.array([[1.0, 0.0], [-1.0, 0.0]]), [1, 0], PV_CLASSES)
        assert knn_predict(knn_fit(data, 1), [0.0, 0.0]) == B

    def test_vote_tie_uses_distance_sum(self):
        pts = np.array([[1.0, 0.0], [-2.0, 0.0], [0.0, 1.5], [0.0, -1.2]])
        data = LabeledDataset(pts, [0, 0, 1, 1], PV_CLASSES)
        # A sums 3.0, B sums 2.7
        assert knn_predict(knn_fit(data, 4), [0.0, 0.0]) == B

    def test_exhaustive_oracle(self):
        rng = np.random.default_rng(4)
        data = blobs(rng, n_per=30, spread=1.5)
        queries = rng.uniform(-3, 6, size=(200, 2))
        for k in (1, 3, 7):
            got = knn_fit(data, k).predict(queries)
            want = [knn_oracle(data.features.tolist(), data.labels.tolist(), q, k, 3) for q in queries.tolist()]
            assert int(np.sum(got != np.array(want))) == 0

    def test_empty_store(self):
        with pytest.raises(StateError):
            knn_fit(LabeledDataset(np.zeros((0, 2)), [], PV_CLASSES), 1)

    def test_k1_resubstitution_zero(self):
        data = blobs(np.random.default_rng(5), spread=3.0)
        assert resubstitution_loss(knn_fit(data, 1), data) == 0.0


class TestId3:
    HAND_X = np.array([[1.0, 5.0], [2.0, 4.0], [3.0, 4.0], [4.0, 1.0], [5.0, 2.0], [6.0, 3.0]])
    HAND_Y = np.array([0, 0, 1, 1, 2, 1])

    def test_single_split_separates(self):
        data = LabeledDataset(np.array([[-2.0], [-1.0], [1.0], [2.0]]), [0, 0, 1, 1], PV_CLASSES)
        tree = id3_train(data)
        assert tree.depth() == 1 and tree.nodes[0].threshold == 0.0
        assert resubstitution_loss(tree, data) == 0.0

    def test_perfect_split_gain_one_bit(self):
        gains = split_candidates(np.array([[0.0], [1.0]]), np.array([0, 1]), 2)
        assert gains == [(0, 0.5, 1.0)]

    def test_root_gains_vs_entropy_oracle(self):
        def h(labels):
            n = len(labels)
            return -sum((labels.count(c) / n) * math.log2(labels.count(c) / n) for c in set(labels))

        y = self.HAND_Y.tolist()
        got = {(f, t): g for f, t, g in split_candidates(self.HAND_X, self.HAND_Y, 3)}
        expected = {}
        for f in range(2):
            vals = sorted(set(self.HAND_X[:, f].tolist()))
            for lo, hi in zip(vals[:-1], vals[1:]):
                t = (lo + hi) / 2
                left = [y[i] for i in range(6) if self.HAND_X[i, f] < t]
                right = [y[i] for i in range(6) if self.HAND_X[i, f] >= t]
                expected[(f, t)] = h(y) - len(left) / 6 * h(left) - len(right) / 6 * h(right)
        assert got.keys() == expected.keys()
        for key, g in expected.items():
            assert abs(got[key] - g) <= 1e-12

    def test_entropy_balanced(self):
        assert entropy(np.array([5, 5])) == 1.0

    def test_depth_zero_tree(self):
        tree = DecisionTree([TreeNode(label=0)], 2, PV_CLASSES)
        assert id3_predict(tree, np.random.default_rng(0).normal(size=(4, 2))) == [A] * 4

    def test_threshold_boundary_goes_right(self):
        tree = DecisionTree([TreeNode(0, 0, 1.0, 1, 2), TreeNode(label=0), TreeNode(label=1)], 1, PV_CLASSES)
        assert id3_predict(tree, np.array([[1.0], [0.999]])) == [B, A]

    def test_fully_grown_consistent(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(150, 2))
        data = LabeledDataset(x, rng.integers(0, 3, 150), PV_CLASSES)
        assert resubstitution_loss(id3_train(data, None, 1), data) == 0.0

    def test_depth_cap(self):
        data = blobs(np.random.default_rng(7), spread=2.0)
        assert id3_train(data, max_depth=2).depth() <= 2


class TestPca:
    def test_rank_one_direction(self):
        t = np.linspace(-3, 3, 50)
        model = pca_fit(np.column_stack([t, t]) + 1.0, 2)
        assert np.allclose(np.abs(model.eigenvectors[:, 0]), 1 / np.sqrt(2), atol=1e-9)

    def test_spectral_identities(self):
        x = np.random.default_rng(8).normal(size=(300, 4)) @ np.diag([3.0, 1.0, 0.5, 0.1])
        model = pca_fit(x, 4)
        cov = np.cov(x.T, bias=True)
        assert model.eigenvalues.sum() == pytest.approx(np.trace(cov), abs=1e-9)
        assert np.allclose(model.eigenvectors.T @ model.eigenvectors, np.eye(4), atol=1e-9)
        assert np.all(np.diff(model.eigenvalues) <= 0)
        z = pca_project(model, x)
        assert np.allclose(z.var(axis=0), model.eigenvalues, rtol=1e-6)

    def test_random_direction_oracle(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(500, 3)) @ rng.normal(size=(3, 3))
        model = pca_fit(x, 1)
        best = np.var((x - model.mean) @ model.eigenvectors[:, 0])
        dirs = rng.normal(size=(10_000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        assert np.all(np.var((x - model.mean) @ dirs.T, axis=0) <= best * (1 + 1e-12))

    def test_mean_projects_to_zero(self):
        x = np.random.default_rng(10).normal(size=(40, 3))
        model = pca_fit(x, 2)
        assert np.allclose(pca_project(model, model.mean), 0.0, atol=1e-12)

    def test_isometry(self):
        x = np.random.default_rng(11).normal(size=(20, 3))
        z = pca_project(pca_fit(x, 3), x)
        assert np.allclose(np.linalg.norm(x[0] - x[5]), np.linalg.norm(z[0] - z[5]), atol=1e-12)

    def test_classify_class_mean_query(self):
        data = blobs(np.random.default_rng(12), centers=((0, 0), (6, 0), (12, 0)))
        model = pca_fit(data.features, 1)
        assert pca_classify(model, data, data.features[data.labels == 1].mean(axis=0)) == B

    def test_classify_nearest_1d_mean(self):
        data = LabeledDataset(np.array([[-1.0, 0.0], [1.0, 0.0]]), [0, 1], PV_CLASSES)
        assert pca_classify(pca_fit(data.features, 1), data, [0.2, 0.0]) == B

    def test_classifier_vs_brute_force(self):
        rng = np.random.default_rng(13)
        data = blobs(rng, spread=2.0)
        clf = pca_train(data)
        queries = rng.uniform(-4, 7, size=(500, 2))
        q = clf.model.eigenvectors[:, 0]
        zt = (data.features - data.features.mean(axis=0)) @ q
        means = [zt[data.labels == c].mean() for c in range(3)]
        want = [min(range(3), key=lambda c: (abs((v - data.features.mean(axis=0)) @ q - means[c]), c)) for v in queries]
        assert np.array_equal(clf.predict(queries), want)


class TestEvaluation:
    def test_confusion_all_correct(self):
        labels = [A, B, C, A]
        cm = confusion_matrix(labels, labels, PV_CLASSES)
        assert np.array_equal(cm.counts, np.diag([2, 1, 1]))
        assert cm.overall_accuracy() == 1.0

    def test_confusion_counting_oracle(self):
        rng = np.random.default_rng(14)
        t = [EPS_CLASSES[i] for i in rng.integers(0, 5, 100)]
        p = [EPS_CLASSES[i] for i in rng.integers(0, 5, 100)]
        cm = confusion_matrix(t, p, EPS_CLASSES)
        for i, ti in enumerate(EPS_CLASSES):
            for j, pj in enumerate(EPS_CLASSES):
                assert cm.counts[i, j] == sum(1 for a, b in zip(t, p) if a == ti and b == pj)
        assert np.array_equal(cm.counts.sum(axis=1), [t.count(c) for c in EPS_CLASSES])

    def test_paper_scale_row(self):
        counts = np.zeros((3, 3), dtype=int)
        counts[0] = [1998, 2, 1]
        from epsfdd.classify import ConfusionMatrix

        assert ConfusionMatrix(counts, PV_CLASSES).per_class_accuracy()[0] == pytest.approx(0.9985, abs=1e-4)

    def test_confusion_label_error(self):
        with pytest.raises(LabelError):
            confusion_matrix([FaultKind.RegIgbtOpen], [A], PV_CLASSES)

    def test_leave_one_out_oracle(self):
        x = np.array([[0.0], [0.2], [0.4], [0.6], [0.8], [5.0], [5.2], [5.4], [5.6], [5.8]])
        data = LabeledDataset(x, [0] * 5 + [1] * 5, PV_CLASSES)
        trainer = lambda d: knn_fit(d, 3)
        misses = []
        for i in range(10):
            keep = np.array([j for j in range(10) if j != i])
            misses.append(float(trainer(data.subset(keep)).predict(x[i : i + 1])[0] != data.labels[i]))
        assert kfold_loss(trainer, data, 10, seed=0) == np.mean(misses)

    def test_folds_stratified(self):
        data = blobs(np.random.default_rng(15), n_per=25)
        fold = stratified_folds(data, 5, 0)
        for c in range(3):
            assert np.array_equal(np.bincount(fold[data.labels == c]), [5] * 5)

    def test_too_few_per_class(self):
        data = LabeledDataset(np.arange(12.0)[:, None], [0] * 9 + [1] * 3, PV_CLASSES)
        with pytest.raises(DataError):
            stratified_folds(data, 5, 0)

    def test_separable_kfold_zero(self):
        data = blobs(np.random.default_rng(16), centers=((0, 0), (20, 20)), spread=0.5)
        assert kfold_loss(lambda d: id3_train(d), data, 5, 0) == 0.0

    def test_select_k(self):
        data = blobs(np.random.default_rng(17), n_per=30, spread=1.8)
        a = knn_select_k(data, range(1, 8), 5, 1)
        b = knn_select_k(data, range(1, 8), 5, 1)
        assert a == b
        assert a.resubstitution[1] == 0.0
        assert a.kfold[a.chosen_k] == min(a.kfold.values())

    def test_select_k_tie_prefers_above_two(self):
        data = blobs(np.random.default_rng(18), centers=((0, 0), (30, 30)), spread=0.5)
        assert knn_select_k(data, [1, 2, 3, 4], 5, 0).chosen_k == 3

    def test_report_fields_and_table(self):
        data = blobs(np.random.default_rng(19))
        rep = evaluate("knn", data, ClassifyConfig(), TrainConfig(), task="demo", config_hash="h")
        d = rep.to_dict()
        for key in ("task", "classifier", "class_order", "confusion", "per_class_accuracy",
                    "overall_accuracy", "resubstitution_loss", "kfold_loss", "seed", "config_hash"):
            assert key in d
        assert rep.to_json() == evaluate("knn", data, ClassifyConfig(), TrainConfig(), task="demo",
                                         config_hash="h").to_json()
        table = comparison_table([rep])
        assert table.splitlines()[0].split() == ["method", "task", "accuracy", "(%)"]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=60))
    def test_row_sums_property(self, pairs):
        t = [PV_CLASSES[a] for a, _ in pairs]
        p = [PV_CLASSES[b] for _, b in pairs]
        cm = confusion_matrix(t, p, PV_CLASSES)
        assert cm.counts.sum() == len(pairs) and 0.0 <= cm.overall_accuracy() <= 1.0
