"""Closed-form ridge regression with k-fold cross-validation.

The intercept is never penalized: targets and feature columns are centered
before the symmetric solve and the intercept is recovered from the means.
Coefficients are reported in the original feature units, so predictions are
simply X @ coefficients + intercept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .seeding import stream

DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.logspace(-3.0, 0.0, 7))

_CV_STREAM = 41


class SingularFitError(ValueError):
    """Normal equations are singular; rank-deficient features need lam > 0."""


@dataclass(frozen=True)
class RidgeModel:
    """Linear model y = X @ coefficients + intercept, fit with penalty lam."""

    coefficients: np.ndarray
    intercept: float
    lam: float

    @property
    def feature_dim(self) -> int:
        return int(self.coefficients.size)


def fit(X, y, lam: float) -> RidgeModel:
    """Solve (Xc'Xc + lam*I) w = Xc'yc on centered data, intercept from the means."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValueError("X must be a 2-d matrix")
    n, p = X.shape
    if n != y.size:
        raise ValueError(f"X has {n} rows but y has {y.size} entries")
    if n < 1:
        raise ValueError("need at least one sample")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    gram = Xc.T @ Xc + lam * np.eye(p)
    rhs = Xc.T @ yc
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularFitError(
            "normal equations are singular at lam=0; refit with lam > 0"
        ) from exc
    # rounding can sneak an exactly singular Gram matrix past the factorization
    if p > 0:
        pivots = np.diag(chol) ** 2
        if np.min(pivots) <= np.max(np.diag(gram)) * p * 1e-14:
            raise SingularFitError(
                "normal equations are singular at lam=0; refit with lam > 0"
            )
    w = scipy.linalg.cho_solve((chol, True), rhs)
    if not np.all(np.isfinite(w)):
        raise SingularFitError(
            "normal equations produced non-finite coefficients; refit with lam > 0"
        )
    intercept = y_mean - float(x_mean @ w)
    return RidgeModel(coefficients=w, intercept=intercept, lam=float(lam))


def predict(model: RidgeModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.feature_dim:
        raise ValueError(f"X must have shape (n, {model.feature_dim})")
    return X @ model.coefficients + model.intercept


@dataclass(frozen=True)
class CvConfig:
    """Cross-validation plan: candidate penalties, fold count, shuffle seed."""

    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if len(self.lambda_grid) == 0:
            raise ValueError("lambda_grid must be non-empty")
        if any(lam <= 0 for lam in self.lambda_grid):
            raise ValueError("lambda_grid entries must be positive")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")


def fit_cv(X, y, cv: CvConfig | None = None):
    """Pick lam by k-fold CV, ties to the larger lam, then refit on all rows.

    Returns (model, chosen_lam, cv_mse) where cv_mse maps each grid value to
    its mean per-fold validation MSE.
    """
    if cv is None:
        cv = CvConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if cv.folds > n:
        raise ValueError(f"{cv.folds} folds but only {n} samples")
    order = stream(cv.seed, _CV_STREAM).permutation(n)
    folds = np.array_split(order, cv.folds)
    grid = sorted(cv.lambda_grid)
    cv_mse: dict[float, float] = {}
    best_lam = None
    best_mse = None
    for lam in grid:
        fold_mses = []
        for fold in folds:
            mask = np.ones(n, dtype=bool)
            mask[fold] = False
            model = fit(X[mask], y[mask], lam)
            err = predict(model, X[fold]) - y[fold]
            fold_mses.append(float(np.mean(err ** 2)))
        mean_mse = float(np.mean(fold_mses))
        cv_mse[float(lam)] = mean_mse
        if best_mse is None or mean_mse <= best_mse:
            best_mse = mean_mse
            best_lam = float(lam)
    final = fit(X, y, best_lam)
    return final, best_lam, cv_mse


def model_to_dict(model: RidgeModel) -> dict:
    return {
        "coefficients": [float(c) for c in model.coefficients],
        "intercept": float(model.intercept),
        "lam": float(model.lam),
    }


def model_from_dict(data: dict) -> RidgeModel:
    return RidgeModel(
        coefficients=np.asarray(data["coefficients"], dtype=float),
        intercept=float(data["intercept"]),
        lam=float(data["lam"]),
    )
