import numpy as np
import pytest

from ffcnn.errors import ConfigError, DegenerateError, DimError
from ffcnn.ssl import (
    CascadeConfig,
    apply_stage,
    build_pseudo_categories,
    fit_ssl_stage,
    onehot,
    predict_features,
    pseudo_probabilities,
    pseudo_probability_matrix,
    quality_score_matrix,
    quality_scores,
    select_unlabeled,
    train_ssl_classifier,
)


def labeled_features(per_class, n_classes=10, d=16, seed=0, spread=0.2):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_classes, d)) * 3.0
    y = np.repeat(np.arange(n_classes), per_class)
    z = centers[y] + spread * rng.normal(size=(y.size, d))
    return z, y


class TestBuildPseudoCategories:
    def test_even_split_120(self):
        z, y = labeled_features(15)
        cats = build_pseudo_categories(z, y, 120, seed=1)
        assert cats.size == 120
        np.testing.assert_array_equal(cats.per_class_counts, [12] * 10)
        assert cats.centroids.shape == (120, 16)

    def test_remainder_split_84(self):
        z, y = labeled_features(12)
        cats = build_pseudo_categories(z, y, 84, seed=1)
        np.testing.assert_array_equal(cats.per_class_counts, [9] * 4 + [8] * 6)
        assert cats.per_class_counts.sum() == 84

    def test_one_cluster_per_class_is_class_mean(self):
        z, y = labeled_features(5)
        cats = build_pseudo_categories(z, y, 10, seed=1)
        for cls in range(10):
            np.testing.assert_allclose(
                cats.centroids[cls], z[y == cls].mean(axis=0), atol=1e-10
            )

    def test_class_map_is_class_major(self):
        z, y = labeled_features(6)
        cats = build_pseudo_categories(z, y, 20, seed=0)
        np.testing.assert_array_equal(cats.class_of, np.repeat(np.arange(10), 2))

    def test_small_population_clamps_and_redistributes(self):
        # class 0 has only 2 samples; others have 12
        z, y = labeled_features(12)
        keep = (y != 0) | (np.arange(y.size) < 2)
        z, y = z[keep], y[keep]
        cats = build_pseudo_categories(z, y, 120, seed=1)
        assert cats.per_class_counts[0] == 2
        assert cats.per_class_counts.sum() == 110  # others already at population
        assert cats.size == 110

    def test_labeled_assignments_match_own_class(self):
        z, y = labeled_features(8)
        cats = build_pseudo_categories(z, y, 40, seed=2)
        np.testing.assert_array_equal(cats.class_of[cats.labeled_assignments], y)

    def test_n_out_below_class_count(self):
        z, y = labeled_features(3)
        with pytest.raises(ConfigError):
            build_pseudo_categories(z, y, 9, seed=0)


class TestPseudoProbabilities:
    def _cats(self, centroids, classes):
        from ffcnn.ssl import PseudoCategorySet

        classes = np.asarray(classes)
        return PseudoCategorySet(
            centroids=np.asarray(centroids, dtype=np.float64),
            class_of=classes,
            per_class_counts=np.bincount(classes),
            n_classes=int(classes.max()) + 1,
        )

    def test_equal_cosines_uniform(self):
        cats = self._cats(np.eye(3), [0, 0, 1])
        z = np.ones(3)
        pv = pseudo_probabilities(z, cats, alpha=50.0)
        np.testing.assert_allclose(pv.p, 1 / 3, atol=1e-12)

    def test_aligned_direction_dominates(self):
        cats = self._cats(np.eye(4), [0, 0, 1, 1])
        pv = pseudo_probabilities(np.array([2.0, 0, 0, 0]), cats, alpha=50.0)
        assert pv.p[0] >= 1 - 3 * np.exp(-50)

    def test_softmax_values_alpha50(self):
        # direct evaluation: softmax(50*(0.9, 0.5, 0.1))
        d = np.array([0.9, 0.5, 0.1])
        expected = np.exp(50 * d - 50 * d.max())
        expected /= expected.sum()
        # centroids chosen so cos(z, c_k) = d_k exactly
        z = np.array([1.0, 0.0])
        cents = np.stack([np.array([dk, np.sqrt(1 - dk**2)]) for dk in d])
        cats = self._cats(cents, [0, 1, 2])
        pv = pseudo_probabilities(z, cats, alpha=50.0)
        np.testing.assert_allclose(pv.p, expected, rtol=1e-9)
        np.testing.assert_allclose(pv.d, d, atol=1e-12)
        assert pv.p[1] == pytest.approx(np.exp(-20), rel=1e-6)
        assert pv.p[2] == pytest.approx(np.exp(-40), rel=1e-6)

    def test_zero_vector_rejected(self):
        cats = self._cats(np.eye(2), [0, 1])
        with pytest.raises(DegenerateError):
            pseudo_probabilities(np.zeros(2), cats)

    def test_normalization_and_scale_invariance(self):
        rng = np.random.default_rng(4)
        cats = self._cats(rng.normal(size=(12, 6)), np.repeat(np.arange(3), 4))
        Z = rng.normal(size=(50, 6))
        P, _ = pseudo_probability_matrix(Z, cats, alpha=50.0)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
        for lam in (1e-3, 7.0, 1e4):
            P2, _ = pseudo_probability_matrix(lam * Z, cats, alpha=50.0)
            np.testing.assert_allclose(P, P2, atol=1e-9)


class TestQualityScores:
    def _cats(self, classes):
        from ffcnn.ssl import PseudoCategorySet

        classes = np.asarray(classes)
        return PseudoCategorySet(
            centroids=np.eye(len(classes)),
            class_of=classes,
            per_class_counts=np.bincount(classes),
            n_classes=int(classes.max()) + 1,
        )

    def test_all_mass_single_class(self):
        cats = self._cats([0, 0, 1, 1])
        score = quality_scores(np.array([0.5, 0.5, 0.0, 0.0]), cats)
        np.testing.assert_allclose(score.s, [1.0, 0.0], atol=1e-12)
        assert score.best_class == 0
        assert score.best_score == pytest.approx(1.0)

    def test_two_class_sums(self):
        cats = self._cats([0, 0, 1, 1])
        score = quality_scores(np.array([0.4, 0.3, 0.2, 0.1]), cats)
        np.testing.assert_allclose(score.s, [0.7, 0.3], atol=1e-12)
        assert score.best_class == 0

    def test_scores_sum_to_one(self):
        rng = np.random.default_rng(5)
        cats = self._cats(np.repeat(np.arange(4), 3))
        P = rng.random((30, 12))
        P /= P.sum(axis=1, keepdims=True)
        S, best = quality_score_matrix(P, cats)
        np.testing.assert_allclose(S.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(best, S.max(axis=1), atol=1e-12)

    def test_select_all(self):
        sel = select_unlabeled(np.array([0.5, 0.1, 0.9]), 1.0)
        np.testing.assert_array_equal(sel, [0, 1, 2])

    def test_select_top_ceil(self):
        sel = select_unlabeled(np.array([0.1, 0.9, 0.5, 0.7]), 0.5)
        np.testing.assert_array_equal(sel, [1, 3])
        sel = select_unlabeled(np.array([0.1, 0.9, 0.5]), 0.5)  # ceil(1.5) = 2
        np.testing.assert_array_equal(sel, [1, 2])

    def test_tie_keeps_lower_index(self):
        sel = select_unlabeled(np.array([0.5, 0.5, 0.5, 0.5]), 0.5)
        np.testing.assert_array_equal(sel, [0, 1])

    def test_empty_input(self):
        assert select_unlabeled(np.empty(0), 0.7).size == 0

    def test_subset_monotone_in_fraction(self):
        rng = np.random.default_rng(6)
        best = rng.random(40)
        prev = set()
        for frac in (0.1, 0.3, 0.5, 0.8, 1.0):
            cur = set(select_unlabeled(best, frac).tolist())
            assert prev <= cur
            prev = cur

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            select_unlabeled(np.array([0.1]), 0.0)


class TestLsrStage:
    def test_supervised_reduction_without_unlabeled(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(30, 8))
        targets = onehot(rng.integers(0, 5, 30), 5)
        s1 = fit_ssl_stage(z, targets, ridge=0.1)
        s2 = fit_ssl_stage(z, targets, z[:0], targets[:0], ridge=0.1)
        np.testing.assert_allclose(s1.W, s2.W, atol=1e-12)

    def test_square_system_interpolates(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=(6, 5))  # with bias column: 6x6 square
        targets = rng.normal(size=(6, 3))
        stage = fit_ssl_stage(z, targets, ridge=0.0)
        pre_relu = np.hstack([z, np.ones((6, 1))]) @ stage.W
        np.testing.assert_allclose(pre_relu, targets, atol=1e-6)

    def test_stacked_system_matches_oracle(self):
        rng = np.random.default_rng(9)
        z_l = rng.normal(size=(12, 6))
        y_l = onehot(rng.integers(0, 4, 12), 4)
        z_ul = rng.normal(size=(20, 6))
        p_ul = rng.random((20, 4))
        p_ul /= p_ul.sum(axis=1, keepdims=True)
        ridge = 0.3
        stage = fit_ssl_stage(z_l, y_l, z_ul, p_ul, ridge=ridge)
        Z = np.hstack([np.vstack([z_l, z_ul]), np.ones((32, 1))])
        Y = np.vstack([y_l, p_ul])
        oracle = np.linalg.inv(Z.T @ Z + ridge * np.eye(7)) @ Z.T @ Y
        np.testing.assert_allclose(stage.W, oracle, atol=1e-8)

    def test_width_mismatch(self):
        with pytest.raises(DimError):
            fit_ssl_stage(np.zeros((3, 4)), np.zeros((3, 2)), np.zeros((2, 5)), np.zeros((2, 2)))

    def test_relu_clamps_negatives(self):
        stage = fit_ssl_stage(np.eye(2), -np.eye(2), ridge=1e-9)
        out = apply_stage(stage, np.eye(2))
        np.testing.assert_allclose(out, 0.0, atol=1e-6)

    def test_zero_weights_zero_output(self):
        from ffcnn.ssl import LsrStage

        stage = LsrStage(W=np.zeros((4, 2)), apply_relu=True)
        np.testing.assert_array_equal(apply_stage(stage, np.ones((3, 3))), 0.0)

    def test_final_stage_passes_negatives(self):
        from ffcnn.ssl import LsrStage

        stage = LsrStage(W=np.vstack([np.eye(2), np.zeros(2)]), apply_relu=False)
        out = apply_stage(stage, np.array([[-1.0, 2.0]]))
        np.testing.assert_allclose(out, [[-1.0, 2.0]])


class TestCascade:
    def test_stage_dims_lenet(self):
        z, y = labeled_features(15, d=320, seed=10)
        model = train_ssl_classifier(z, y, None, CascadeConfig(widths=(120, 84, 10), unlabeled_mode="none"))
        assert model.stage_dims == [320, 120, 84, 10]
        assert [s.apply_relu for s in model.stages] == [True, True, False]

    def test_stage_dims_color(self):
        z, y = labeled_features(25, d=768, seed=11)
        rng = np.random.default_rng(12)
        z_ul = rng.normal(size=(60, 768))
        model = train_ssl_classifier(z, y, z_ul, CascadeConfig(widths=(200, 100, 10), keep_fraction=0.8))
        assert model.stage_dims == [768, 200, 100, 10]
        assert model.selected_counts == [48, 48]  # ceil(0.8 * 60)

    def test_no_unlabeled_equals_mode_none(self):
        z, y = labeled_features(14, d=32, seed=13)
        m1 = train_ssl_classifier(z, y, None, CascadeConfig(widths=(20, 10), unlabeled_mode="selected", seed=3))
        m2 = train_ssl_classifier(z, y, np.zeros((0, 32)), CascadeConfig(widths=(20, 10), unlabeled_mode="selected", seed=3))
        for s1, s2 in zip(m1.stages, m2.stages):
            np.testing.assert_allclose(s1.W, s2.W, atol=1e-12)

    def test_widths_must_end_at_class_count(self):
        z, y = labeled_features(5, d=16)
        with pytest.raises(ConfigError):
            train_ssl_classifier(z, y, None, CascadeConfig(widths=(20, 12)))

    def test_deterministic(self):
        z, y = labeled_features(13, d=24, seed=14)
        rng = np.random.default_rng(15)
        z_ul = rng.normal(size=(80, 24))
        cfg = CascadeConfig(widths=(20, 10), seed=21)
        m1 = train_ssl_classifier(z, y, z_ul, cfg)
        m2 = train_ssl_classifier(z, y, z_ul, cfg)
        for s1, s2 in zip(m1.stages, m2.stages):
            np.testing.assert_array_equal(s1.W, s2.W)

    def test_dims_strictly_decreasing(self):
        z, y = labeled_features(15, d=320, seed=16)
        rng = np.random.default_rng(17)
        model = train_ssl_classifier(z, y, rng.normal(size=(50, 320)), CascadeConfig(widths=(120, 84, 10)))
        dims = model.stage_dims
        assert all(a > b for a, b in zip(dims, dims[1:]))

    def test_unselected_rows_still_propagate(self):
        # selection at stage 1 must not shrink the unlabeled pool seen later
        z, y = labeled_features(12, d=16, seed=18)
        rng = np.random.default_rng(19)
        z_ul = rng.normal(size=(40, 16))
        cfg = CascadeConfig(widths=(20, 10), keep_fraction=0.5)
        model = train_ssl_classifier(z, y, z_ul, cfg)
        assert model.selected_counts == [20]


class TestPredict:
    def test_argmax_and_ties(self):
        from ffcnn.ssl import LsrStage, SslFfcnnModel

        W = np.zeros((4, 3))
        W[0] = [0.1, 0.9, 0.9]  # tie between classes 1 and 2 -> picks 1
        model = SslFfcnnModel(
            stages=[LsrStage(W=W, apply_relu=False)],
            stage_dims=[3, 3],
            n_classes=3,
            config=CascadeConfig(widths=(3,)),
        )
        labels, dec = predict_features(model, np.array([[1.0, 0.0, 0.0]]))
        assert labels[0] == 1
        np.testing.assert_allclose(dec, [[0.1, 0.9, 0.9]])

    def test_identical_inputs_identical_decisions(self):
        z, y = labeled_features(12, d=16, seed=20)
        model = train_ssl_classifier(z, y, None, CascadeConfig(widths=(15, 10), unlabeled_mode="none"))
        row = z[:1]
        labels, dec = predict_features(model, np.vstack([row, row]))
        np.testing.assert_array_equal(dec[0], dec[1])
        assert labels[0] == labels[1]

    def test_width_mismatch(self):
        z, y = labeled_features(12, d=16, seed=22)
        model = train_ssl_classifier(z, y, None, CascadeConfig(widths=(15, 10), unlabeled_mode="none"))
        with pytest.raises(DimError):
            predict_features(model, np.zeros((2, 17)))

    def test_residual_gradient_on_stacked_system(self):
        # stage optimality: Z'(ZW - Y) + ridge*W = 0 on the Eq-style stack
        rng = np.random.default_rng(23)
        z_l = rng.normal(size=(15, 8))
        y_t = onehot(rng.integers(0, 5, 15), 5)
        z_ul = rng.normal(size=(25, 8))
        p_ul = rng.random((25, 5))
        p_ul /= p_ul.sum(axis=1, keepdims=True)
        ridge = 0.7
        stage = fit_ssl_stage(z_l, y_t, z_ul, p_ul, ridge=ridge)
        Z = np.hstack([np.vstack([z_l, z_ul]), np.ones((40, 1))])
        Y = np.vstack([y_t, p_ul])
        grad = Z.T @ (Z @ stage.W - Y) + ridge * stage.W
        assert np.linalg.norm(grad) <= 1e-6 * np.linalg.norm(Z.T @ Y)
