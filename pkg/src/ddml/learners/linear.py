"""Linear learners: OLS, cross-validated ridge, cross-validated lasso.

Ridge and lasso standardize features to zero mean and unit variance on
each training split, leave the intercept unpenalized, and pick the
penalty that minimizes V-fold cross-validation mean squared error over a
geometric grid. The grid runs from lam_max (the smallest penalty that
zeroes every lasso slope) down to 1e-4 * lam_max in 100 steps; ridge
reuses the same grid scaled up by 100 since its useful penalties are
larger.

The penalized objectives, on standardized features Xs and centered y:

    ridge: (1/2n)||y - Xs b||^2 + (lam/2)||b||^2, i.e. b solves
           (Xs'Xs + n lam I) b = Xs'y
    lasso: (1/2n)||y - Xs b||^2 + lam ||b||_1  (cyclic coordinate descent
           with soft thresholding; converged when the largest coefficient
           update in a sweep is below tol)
"""

from __future__ import annotations

import numpy as np

from ..errors import ConvergenceError
from ..folds import assign_folds
from ..rng import derive_seed
from ._kernels import lasso_path
from .base import Standardizer, TransformMixin, ols_solve

GRID_SIZE = 100
GRID_DECADES = 1e-4
RIDGE_GRID_SCALE = 100.0


class LinearModel(TransformMixin):
    """Fitted linear predictor: intercept + X_expanded @ coef."""

    def __init__(self, intercept, coef, transform, p_raw, info=None):
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=np.float64)
        self._init_transform(transform, p_raw)
        self.info = info or {}

    def predict(self, X):
        Xt = self._expand(X)
        return self.intercept + Xt @ self.coef


class OlsLearner:
    def __init__(self, transform="base", label=None):
        self.transform = transform
        self.label = label or ("ols" if transform == "base" else f"ols_{transform}")

    def fit(self, X, y, seed=0):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        from ..features import expand_features

        Xt = expand_features(X, self.transform)
        intercept, coef = ols_solve(Xt, y)
        return LinearModel(intercept, coef, self.transform, X.shape[1])


def lasso_lambda_max(Xs: np.ndarray, yc: np.ndarray) -> float:
    """Smallest penalty that zeroes all lasso slopes: max_j |x_j'y| / n."""
    n = len(yc)
    if Xs.shape[1] == 0 or n == 0:
        return 1.0
    return float(np.max(np.abs(Xs.T @ yc)) / n)


def default_grid(Xs: np.ndarray, yc: np.ndarray, scale: float = 1.0) -> np.ndarray:
    lam_max = lasso_lambda_max(Xs, yc)
    if lam_max <= 0:
        lam_max = 1.0
    return scale * lam_max * np.geomspace(1.0, GRID_DECADES, GRID_SIZE)


def _ridge_coefs(Xs: np.ndarray, yc: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Ridge solutions for every penalty via one eigendecomposition.

    Penalties of zero fall back to the minimum-norm least squares solution.
    Returns (G, p) coefficients on the standardized scale.
    """
    n, p = Xs.shape
    gram = Xs.T @ Xs
    xty = Xs.T @ yc
    eigval, eigvec = np.linalg.eigh(gram)
    proj = eigvec.T @ xty
    coefs = np.empty((len(grid), p), dtype=np.float64)
    tol = max(n, p) * np.finfo(float).eps * max(eigval.max(initial=0.0), 0.0)
    for g, lam in enumerate(grid):
        denom = eigval + n * lam
        if lam > 0:
            scaled = proj / denom
        else:
            scaled = np.where(eigval > tol, proj / np.where(eigval > tol, eigval, 1.0), 0.0)
        coefs[g] = eigvec @ scaled
    return coefs


def _cv_folds(n, v, seed):
    return assign_folds(n, v, 1, derive_seed(seed, "cvgrid")).assignment[:, 0]


class _PenalizedCvLearner:
    """Shared CV-over-grid driver for ridge and lasso."""

    kind = ""

    def __init__(self, lambda_grid=None, v=5, transform="base", label=None,
                 tol=1e-9, max_sweeps=20000):
        self.lambda_grid = None if lambda_grid is None else np.asarray(lambda_grid, dtype=np.float64)
        self.v = int(v)
        self.transform = transform
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.label = label or (self.kind if transform == "base" else f"{self.kind}_{transform}")

    def _path_coefs(self, Xs, yc, grid):
        raise NotImplementedError

    def _make_grid(self, Xs, yc):
        raise NotImplementedError

    def fit(self, X, y, seed=0):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        from ..features import expand_features

        Xt = expand_features(X, self.transform)
        n = len(y)
        scaler = Standardizer(Xt)
        Xs = np.asfortranarray(scaler.apply(Xt))
        yc = y - y.mean()

        grid = self.lambda_grid if self.lambda_grid is not None else self._make_grid(Xs, yc)
        grid = np.asarray(grid, dtype=np.float64)
        order = np.argsort(grid)[::-1]  # fit from largest penalty down
        grid_desc = grid[order]

        if len(grid_desc) > 1:
            folds = _cv_folds(n, self.v, seed)
            cv_sse = np.zeros(len(grid_desc), dtype=np.float64)
            for k in range(1, self.v + 1):
                val = folds == k
                trn = ~val
                sub_scaler = Standardizer(Xt[trn])
                Xs_trn = np.asfortranarray(sub_scaler.apply(Xt[trn]))
                y_trn = y[trn]
                yc_trn = y_trn - y_trn.mean()
                coefs = self._path_coefs(Xs_trn, yc_trn, grid_desc)
                Xs_val = sub_scaler.apply(Xt[val])
                preds = Xs_val @ coefs.T + y_trn.mean()
                cv_sse += np.sum((y[val][:, None] - preds) ** 2, axis=0)
            best = int(np.argmin(cv_sse))  # ties resolve to the larger penalty
        else:
            best = 0
        lam = float(grid_desc[best])

        coef_std = self._path_coefs(Xs, yc, grid_desc[: best + 1])[best]
        coef_full_std = scaler.restore_coef(coef_std)
        coef = coef_full_std / scaler.std
        intercept = y.mean() - scaler.mean @ coef
        info = {
            "lambda": lam,
            "grid": grid_desc,
            "dropped_features": scaler.dropped,
            "warnings": (
                [f"dropped {len(scaler.dropped)} zero-variance feature(s)"]
                if len(scaler.dropped) else []
            ),
            "coef_std": coef_std,
            "scaler": scaler,
        }
        return LinearModel(intercept, coef, self.transform, X.shape[1], info=info)


class RidgeCvLearner(_PenalizedCvLearner):
    kind = "ridgecv"

    def _make_grid(self, Xs, yc):
        return default_grid(Xs, yc, scale=RIDGE_GRID_SCALE)

    def _path_coefs(self, Xs, yc, grid):
        if Xs.shape[1] == 0:
            return np.zeros((len(grid), 0))
        return _ridge_coefs(Xs, yc, grid)


class LassoCvLearner(_PenalizedCvLearner):
    kind = "lassocv"

    def _make_grid(self, Xs, yc):
        return default_grid(Xs, yc)

    def _path_coefs(self, Xs, yc, grid):
        if Xs.shape[1] == 0:
            return np.zeros((len(grid), 0))
        coefs, sweeps, converged = lasso_path(Xs, yc, grid, self.tol, self.max_sweeps)
        if not np.all(converged):
            bad = int(np.where(converged == 0)[0][0])
            raise ConvergenceError(
                f"lasso coordinate descent did not converge at penalty {grid[bad]:.3e} "
                f"after {int(sweeps[bad])} sweeps",
                iterations=int(sweeps[bad]),
            )
        return coefs
