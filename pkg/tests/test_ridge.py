import numpy as np
import pytest

from mtlgrouping import ridge
from mtlgrouping.ridge import CvConfig, SingularFitError
from mtlgrouping.seeding import stream

from helpers import centered_ridge


class TestFit:
    def test_exact_line_through_origin(self):
        model = ridge.fit([[1.0], [2.0]], [1.0, 2.0], 0.0)
        assert model.coefficients[0] == pytest.approx(1.0, abs=1e-12)
        assert model.intercept == pytest.approx(0.0, abs=1e-12)

    def test_hand_normal_equations_lam_one(self):
        model = ridge.fit([[-0.5], [0.5]], [-0.5, 0.5], 1.0)
        assert model.coefficients[0] == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_huge_lam_shrinks_to_mean(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((20, 3))
        y = rng.standard_normal(20)
        model = ridge.fit(X, y, 1e12)
        assert np.linalg.norm(model.coefficients) < 1e-9
        assert model.intercept == pytest.approx(float(y.mean()), abs=1e-9)

    def test_singular_at_lam_zero(self):
        X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        with pytest.raises(SingularFitError, match="lam > 0"):
            ridge.fit(X, [1.0, 2.0, 3.0], 0.0)

    def test_normal_equation_residual_small(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(3, 30))
            p = int(rng.integers(1, 6))
            X = rng.standard_normal((n, p)) * rng.uniform(0.1, 10)
            y = rng.standard_normal(n)
            lam = float(rng.uniform(0.0, 2.0)) + 1e-6
            model = ridge.fit(X, y, lam)
            Xc = X - X.mean(axis=0)
            yc = y - y.mean()
            resid = (Xc.T @ Xc + lam * np.eye(p)) @ model.coefficients - Xc.T @ yc
            scale = 1.0 + np.max(np.abs(Xc.T @ yc))
            assert np.max(np.abs(resid)) < 1e-8 * scale

    def test_monotone_shrinkage(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            X = rng.standard_normal((15, 4))
            y = rng.standard_normal(15)
            norms = [np.linalg.norm(ridge.fit(X, y, lam).coefficients)
                     for lam in (0.0, 0.01, 0.1, 1.0, 10.0, 100.0)]
            for a, b in zip(norms, norms[1:]):
                assert a >= b - 1e-12

    def test_matches_independent_least_squares(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            X = rng.standard_normal((12, 3))
            y = rng.standard_normal(12)
            model = ridge.fit(X, y, 0.0)
            coef, _, _, _ = np.linalg.lstsq(
                np.column_stack([X, np.ones(len(y))]), y, rcond=None)
            assert np.allclose(model.coefficients, coef[:-1], rtol=1e-8, atol=1e-10)
            assert model.intercept == pytest.approx(coef[-1], rel=1e-8, abs=1e-10)

    def test_matches_centered_oracle_with_penalty(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            X = rng.standard_normal((10, 4))
            y = rng.standard_normal(10)
            lam = float(rng.uniform(0.01, 5.0))
            model = ridge.fit(X, y, lam)
            w, b = centered_ridge(X, y, lam)
            assert np.allclose(model.coefficients, w, rtol=1e-10, atol=1e-12)
            assert model.intercept == pytest.approx(b, rel=1e-10, abs=1e-12)


class TestPredict:
    def test_zero_coefficients_constant(self):
        model = ridge.RidgeModel(coefficients=np.zeros(2), intercept=3.5, lam=1.0)
        assert np.array_equal(ridge.predict(model, [[1.0, 2.0], [9.0, -1.0]]), [3.5, 3.5])

    def test_hand_model(self):
        model = ridge.RidgeModel(coefficients=np.array([2.0]), intercept=1.0, lam=0.0)
        assert ridge.predict(model, [[3.0]])[0] == pytest.approx(7.0)

    def test_residual_orthogonal_to_columns(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((20, 3))
        y = rng.standard_normal(20)
        model = ridge.fit(X, y, 0.0)
        resid = y - ridge.predict(model, X)
        assert np.max(np.abs(X.T @ resid)) < 1e-8

    def test_shape_mismatch(self):
        model = ridge.fit([[1.0], [2.0]], [1.0, 2.0], 0.1)
        with pytest.raises(ValueError):
            ridge.predict(model, [[1.0, 2.0]])


class TestFitCv:
    def test_linear_target_prefers_small_lam(self):
        X = np.arange(12, dtype=float).reshape(-1, 1)
        y = 3.0 * X[:, 0] + 1.0
        cv = CvConfig(lambda_grid=(0.001, 1.0), folds=4, seed=11)
        _, lam, cv_mse = ridge.fit_cv(X, y, cv)
        assert lam == 0.001
        # brute-force fold loop with the same partition
        order = stream(11, 41).permutation(12)
        for grid_lam in (0.001, 1.0):
            fold_mses = []
            for fold in np.array_split(order, 4):
                mask = np.ones(12, dtype=bool)
                mask[fold] = False
                model = ridge.fit(X[mask], y[mask], grid_lam)
                err = ridge.predict(model, X[fold]) - y[fold]
                fold_mses.append(float(np.mean(err ** 2)))
            assert cv_mse[grid_lam] == float(np.mean(fold_mses))

    def test_leave_one_out_three_points_by_hand(self):
        # x in {0, 1, 2}, y = x, lam = 0.5; each fold fits two points:
        # slope = Sxy / (Sxx + lam) with centered data, then error on the
        # held-out point. Folds enumerated by hand below.
        X = np.array([[0.0], [1.0], [2.0]])
        y = np.array([0.0, 1.0, 2.0])
        lam = 0.5
        expected = {}
        for left_out in range(3):
            keep = [i for i in range(3) if i != left_out]
            xs, ys = X[keep, 0], y[keep]
            sxx = float(np.sum((xs - xs.mean()) ** 2))
            sxy = float(np.sum((xs - xs.mean()) * (ys - ys.mean())))
            w = sxy / (sxx + lam)
            b = ys.mean() - w * xs.mean()
            expected[left_out] = (w * X[left_out, 0] + b - y[left_out]) ** 2
        cv = CvConfig(lambda_grid=(lam,), folds=3, seed=0)
        _, _, cv_mse = ridge.fit_cv(X, y, cv)
        assert cv_mse[lam] == pytest.approx(float(np.mean(list(expected.values()))), abs=1e-12)

    def test_constant_target_ties_to_largest_lam(self):
        X = np.arange(8, dtype=float).reshape(-1, 1)
        y = np.full(8, 2.0)
        _, lam, cv_mse = ridge.fit_cv(X, y, CvConfig(lambda_grid=(0.001, 0.1, 1.0), folds=4))
        assert lam == 1.0
        assert len(set(cv_mse.values())) == 1

    def test_refit_uses_all_rows(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((10, 2))
        y = rng.standard_normal(10)
        model, lam, _ = ridge.fit_cv(X, y, CvConfig(folds=5, seed=3))
        direct = ridge.fit(X, y, lam)
        assert np.array_equal(model.coefficients, direct.coefficients)
        assert model.intercept == direct.intercept

    def test_too_few_samples(self):
        with pytest.raises(ValueError, match="folds"):
            ridge.fit_cv([[1.0], [2.0]], [1.0, 2.0], CvConfig(folds=3))


class TestSerialization:
    def test_round_trip(self):
        model = ridge.fit([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], [1.0, 2.0, 3.5], 0.05)
        back = ridge.model_from_dict(ridge.model_to_dict(model))
        assert np.array_equal(back.coefficients, model.coefficients)
        assert back.intercept == model.intercept
        assert back.lam == model.lam
