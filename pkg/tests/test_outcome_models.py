import numpy as np
import pytest

from mbpolicy import (
    ObservationalDataset,
    OutcomeModel,
    expand_features,
    fit_lasso_per_arm,
    fit_ols_per_arm,
    predict,
    predict_matrix,
)
from mbpolicy.outcome_models import _lasso_path, _standardize, default_lambda_grid


def two_arm_data(x0, y0, x1, y1):
    x0, x1 = np.atleast_2d(np.asarray(x0, dtype=float)), np.atleast_2d(np.asarray(x1, dtype=float))
    if x0.shape[0] == 1 and len(y0) > 1:
        x0 = x0.T
    if x1.shape[0] == 1 and len(y1) > 1:
        x1 = x1.T
    names = tuple(f"f{j}" for j in range(x0.shape[1]))
    return ObservationalDataset(
        x=np.vstack([x0, x1]),
        w=np.concatenate([np.zeros(len(y0), dtype=int), np.ones(len(y1), dtype=int)]),
        y=np.concatenate([y0, y1]).astype(float),
        feature_names=names,
    )


class TestExpansion:
    def test_linear_is_passthrough(self):
        x = np.array([[1.0, 2.0]])
        np.testing.assert_array_equal(expand_features(x, "linear"), x)

    def test_quadratic_order(self):
        # columns: x1, x2, x1^2, x2^2, x1*x2
        out = expand_features(np.array([[1.0, 2.0]]), "quadratic")
        np.testing.assert_array_equal(out, [[1.0, 2.0, 1.0, 4.0, 2.0]])

    def test_unknown_expansion(self):
        with pytest.raises(ValueError, match="unknown expansion"):
            expand_features(np.ones((2, 2)), "cubic")


class TestOls:
    def test_exactly_linear_arm_recovered(self):
        x0, x1 = np.array([0.0, 1.0, 2.0]), np.array([0.5, 1.5, 2.5])
        data = two_arm_data(x0, 1 + 2 * x0, x1, 1 + 2 * x1)
        model = fit_ols_per_arm(data)
        np.testing.assert_allclose(model.coef0, [1.0, 2.0], atol=1e-8)
        np.testing.assert_allclose(model.coef1, [1.0, 2.0], atol=1e-8)
        assert model.lambda0 == model.lambda1 == 0.0
        # training points are interpolated exactly
        np.testing.assert_allclose(predict_matrix(model, data.x, 1), 1 + 2 * data.x[:, 0], atol=1e-8)

    def test_constant_outcome_per_arm(self):
        x = np.linspace(0, 1, 5)
        data = two_arm_data(x, np.full(5, 3.0), x + 0.1, np.full(5, 5.0))
        model = fit_ols_per_arm(data)
        np.testing.assert_allclose(model.coef0, [3.0, 0.0], atol=1e-8)
        np.testing.assert_allclose(model.coef1, [5.0, 0.0], atol=1e-8)

    def test_residuals_orthogonal_to_design(self):
        rng = np.random.default_rng(31)
        x = rng.normal(size=(100, 4))
        y = rng.normal(size=100)
        w = np.array([0, 1] * 50)
        data = ObservationalDataset(x=x, w=w, y=y, feature_names=("a", "b", "c", "d"))
        for expansion in ("linear", "quadratic"):
            model = fit_ols_per_arm(data, expansion)
            for arm in (0, 1):
                idx = data.arm_indices(arm)
                design = np.hstack(
                    [np.ones((len(idx), 1)), expand_features(x[idx], expansion)]
                )
                residual = y[idx] - predict_matrix(model, x[idx], arm)
                np.testing.assert_allclose(design.T @ residual, 0.0, atol=1e-8)

    def test_small_arm_rejected(self):
        data = two_arm_data([0.0, 1.0], [1.0, 2.0], [0.0, 1.0, 2.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="arm 0 has 2"):
            fit_ols_per_arm(data)


class TestPredict:
    def affine_model(self):
        return OutcomeModel(
            expansion="linear",
            coef0=np.array([1.0, 2.0]),
            coef1=np.array([4.0, -1.0]),
            centers0=np.zeros(1),
            scales0=np.ones(1),
            centers1=np.zeros(1),
            scales1=np.ones(1),
        )

    def test_affine_evaluation(self):
        assert predict(self.affine_model(), [3.0], 0) == 7.0
        assert predict(self.affine_model(), [3.0], 1) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            predict(self.affine_model(), [3.0, 4.0], 0)

    def test_invalid_arm(self):
        with pytest.raises(ValueError, match="w must be 0 or 1"):
            predict(self.affine_model(), [3.0], 2)

    def test_text_round_trip(self):
        rng = np.random.default_rng(32)
        x = rng.normal(size=(60, 3))
        y = rng.normal(size=60)
        w = np.array([0, 1] * 30)
        data = ObservationalDataset(x=x, w=w, y=y, feature_names=("a", "b", "c"))
        model = fit_lasso_per_arm(data, folds=3, seed=5)
        restored = OutcomeModel.from_text(model.to_text())
        pts = rng.normal(size=(10, 3))
        for arm in (0, 1):
            np.testing.assert_array_equal(
                predict_matrix(model, pts, arm), predict_matrix(restored, pts, arm)
            )
        assert restored.lambda0 == model.lambda0


def symmetric_single_feature_arm(slope, intercept, scale=0.7):
    x = scale * np.array([1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0, -4.0])
    return x, slope * x + intercept


class TestLasso:
    def test_huge_penalty_shrinks_to_arm_means(self):
        rng = np.random.default_rng(33)
        x = rng.normal(size=(40, 2))
        y = rng.normal(size=40) + 3.0
        w = np.array([0, 1] * 20)
        data = ObservationalDataset(x=x, w=w, y=y, feature_names=("a", "b"))
        model = fit_lasso_per_arm(data, lambda_grid=np.array([1e6]), folds=4)
        for arm, coef in ((0, model.coef0), (1, model.coef1)):
            np.testing.assert_allclose(coef[1:], 0.0, atol=1e-12)
            assert coef[0] == pytest.approx(y[data.arm_indices(arm)].mean(), abs=1e-12)

    def test_zero_penalty_matches_least_squares(self):
        rng = np.random.default_rng(34)
        x = rng.normal(size=(80, 2))
        w = np.array([0, 1] * 40)
        y = 1.0 + x[:, 0] - 0.5 * x[:, 1] + 0.2 * x[:, 0] * x[:, 1] + 0.1 * rng.normal(size=80)
        data = ObservationalDataset(x=x, w=w, y=y, feature_names=("a", "b"))
        model = fit_lasso_per_arm(data, lambda_grid=np.array([0.0]), folds=4)
        for arm, coef in ((0, model.coef0), (1, model.coef1)):
            idx = data.arm_indices(arm)
            design = np.hstack([np.ones((len(idx), 1)), expand_features(x[idx], "quadratic")])
            reference, *_ = np.linalg.lstsq(design, y[idx], rcond=None)
            np.testing.assert_allclose(coef, reference, atol=1e-6)

    def test_analytic_soft_threshold_solution(self):
        # symmetric design makes the linear and squared columns exactly uncorrelated,
        # so the penalized slope has the closed form sign(b) * max(|b| - lambda, 0)
        x_arm, y0 = symmetric_single_feature_arm(slope=3.0, intercept=0.0)
        _, y1 = symmetric_single_feature_arm(slope=3.0, intercept=10.0)
        data = two_arm_data(x_arm, y0, x_arm, y1)
        model = fit_lasso_per_arm(data, lambda_grid=np.array([1.0]), folds=2)
        sd = x_arm.std()
        ls_slope = 3.0 * sd  # least-squares slope of the standardized column
        expected_std_slope = np.sign(ls_slope) * max(abs(ls_slope) - 1.0, 0.0)
        for coef, ybar in ((model.coef0, 0.0), (model.coef1, 10.0)):
            assert coef[1] * sd == pytest.approx(expected_std_slope, abs=1e-6)
            assert coef[2] == pytest.approx(0.0, abs=1e-8)  # squared column stays out
            assert coef[0] == pytest.approx(ybar, abs=1e-6)

    def test_path_start_zeroes_everything(self):
        rng = np.random.default_rng(35)
        features = rng.normal(size=(50, 5))
        y = rng.normal(size=50)
        grid = default_lambda_grid(features, y)
        assert len(grid) == 100
        assert grid[-1] / grid[0] == pytest.approx(1e-4, rel=1e-9)
        assert np.all(np.diff(grid) < 0)
        xs, _, _ = _standardize(features)
        path = _lasso_path(xs, y - y.mean(), grid[:1])
        np.testing.assert_array_equal(path[0], np.zeros(5))

    def test_sparsity_grows_with_penalty(self):
        rng = np.random.default_rng(36)
        hits = 0
        trials = 40
        for _ in range(trials):
            features = rng.normal(size=(50, 6))
            y = features @ rng.normal(size=6) * 0.5 + rng.normal(size=50)
            xs, _, _ = _standardize(features)
            grid = default_lambda_grid(features, y)[::10]
            path = _lasso_path(xs, y - y.mean(), grid)
            zeros = np.sum(path == 0.0, axis=1)
            if np.all(np.diff(zeros) <= 0):
                hits += 1
        assert hits / trials >= 0.95

    def test_cv_selection_deterministic(self):
        rng = np.random.default_rng(37)
        x = rng.normal(size=(60, 3))
        y = x @ np.array([1.0, -2.0, 0.0]) + rng.normal(size=60)
        w = np.array([0, 1] * 30)
        data = ObservationalDataset(x=x, w=w, y=y, feature_names=("a", "b", "c"))
        first = fit_lasso_per_arm(data, folds=5, seed=9)
        second = fit_lasso_per_arm(data, folds=5, seed=9)
        assert first.to_text() == second.to_text()

    def test_grid_validation(self):
        data = two_arm_data(
            np.arange(6.0), np.arange(6.0), np.arange(6.0) + 0.5, np.arange(6.0)
        )
        with pytest.raises(ValueError, match="empty"):
            fit_lasso_per_arm(data, lambda_grid=np.array([]), folds=2)
        with pytest.raises(ValueError, match="descending"):
            fit_lasso_per_arm(data, lambda_grid=np.array([0.1, 1.0]), folds=2)
        with pytest.raises(ValueError, match="nonnegative"):
            fit_lasso_per_arm(data, lambda_grid=np.array([-0.5]), folds=2)

    def test_folds_larger_than_arm_rejected(self):
        data = two_arm_data(
            np.arange(4.0), np.arange(4.0), np.arange(8.0), np.arange(8.0)
        )
        with pytest.raises(ValueError, match="arm 0 has 4"):
            fit_lasso_per_arm(data, folds=5)
