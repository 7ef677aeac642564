"""Deterministic feature expansions applied inside learners.

base        raw columns unchanged
poly5       x_j, x_j^2, ..., x_j^5 for each column j (5p columns, grouped by j)
poly2inter  all x_j, then all x_j^2, then all pairwise x_j*x_l for j < l
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError

TRANSFORMS = ("base", "poly5", "poly2inter")


def expand_features(X: np.ndarray, transform: str = "base") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if not np.all(np.isfinite(X)):
        raise DataError("feature matrix contains non-finite values")
    if transform == "base":
        return X
    if transform == "poly5":
        cols = []
        for j in range(X.shape[1]):
            xj = X[:, j]
            cols.extend(xj ** power for power in range(1, 6))
        return np.column_stack(cols)
    if transform == "poly2inter":
        p = X.shape[1]
        cols = [X[:, j] for j in range(p)]
        cols += [X[:, j] ** 2 for j in range(p)]
        for j in range(p):
            for l in range(j + 1, p):
                cols.append(X[:, j] * X[:, l])
        return np.column_stack(cols)
    raise ConfigError(f"unknown feature transform {transform!r} (expected one of {TRANSFORMS})")


def expanded_width(p: int, transform: str) -> int:
    if transform == "base":
        return p
    if transform == "poly5":
        return 5 * p
    if transform == "poly2inter":
        return 2 * p + p * (p - 1) // 2
    raise ConfigError(f"unknown feature transform {transform!r}")
