"""Learner interface and shared fitting plumbing.

A learner is any object with

    fit(X, y, seed) -> fitted model
    label           -> short name used in reports

and a fitted model is any object with ``predict(X) -> (n,) array``. The
built-in learners apply their feature transform internally, so callers
always pass raw feature matrices.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..features import expand_features


class TransformMixin:
    """Stores the transform and raw width; validates prediction inputs."""

    def _init_transform(self, transform: str, p_raw: int):
        self._transform = transform
        self._p_raw = p_raw

    def _expand(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[1] != self._p_raw:
            raise DataError(
                f"prediction matrix has {X.shape[1]} columns, model was trained on {self._p_raw}"
            )
        if X.shape[0] == 0:
            return np.empty((0, self._p_raw), dtype=np.float64)
        return expand_features(X, self._transform)


def ols_solve(X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Least squares with intercept; minimum-norm slopes on rank-deficient
    designs. Returns (intercept, coef)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    coef, *_ = np.linalg.lstsq(X - x_mean, y - y_mean, rcond=None)
    intercept = y_mean - x_mean @ coef
    return float(intercept), coef


class Standardizer:
    """Column-wise zero-mean unit-variance scaling fit on the training
    split only. Zero-variance columns are dropped and recorded."""

    def __init__(self, X: np.ndarray):
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)  # population std, so sum(xs_j^2) == n exactly
        self.keep = std > 0.0
        self.dropped = np.where(~self.keep)[0]
        self.std = np.where(self.keep, std, 1.0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        Xs = (X - self.mean) / self.std
        return Xs[:, self.keep]

    def restore_coef(self, coef_kept: np.ndarray) -> np.ndarray:
        """Map coefficients on the kept standardized columns back to a
        full-width standardized-scale vector (zeros for dropped columns)."""
        full = np.zeros(len(self.keep), dtype=np.float64)
        full[self.keep] = coef_kept
        return full
