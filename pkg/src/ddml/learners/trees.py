"""Tree ensembles: random forest and stagewise gradient boosting.

Split finding is histogram-based (see _kernels): each feature is
discretized into at most 256 bins on the training sample. A feature with
no more distinct values than bins gets one bin per value, which makes the
search exhaustive over midpoint thresholds, exactly like classic CART;
denser features use near-equal-occupancy bins. Splits minimize the summed
within-child squared error, with ties broken toward the lowest feature
index and then the lowest threshold.

Randomness (bootstrap rows, feature subsets, the boosting validation
split) is drawn from streams derived deterministically from the fit seed
and, for forests, the tree index, so ensembles are reproducible and may
be fit concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..features import expand_features
from ..rng import derive_seed, make_rng
from . import _kernels
from .base import TransformMixin

MAX_BINS = 256


def bin_features(X: np.ndarray, max_bins: int = MAX_BINS):
    """Discretize columns of X.

    Returns (codes, edges, edge_offset, n_bins): codes is (n, p) uint8 in
    Fortran order; feature j with B bins has B-1 boundary thresholds at
    edges[edge_offset[j] : edge_offset[j] + B - 1], and value v falls in
    bin b iff the number of boundaries strictly below v equals b (so
    "v <= boundary" routes left, matching prediction on raw values).
    """
    n, p = X.shape
    codes = np.empty((n, p), dtype=np.uint8, order="F")
    all_edges = []
    n_bins = np.empty(p, dtype=np.int64)
    edge_offset = np.zeros(p + 1, dtype=np.int64)
    for j in range(p):
        col = X[:, j]
        uniq = np.unique(col)
        if len(uniq) <= max_bins:
            edges = (uniq[:-1] + uniq[1:]) / 2.0
        else:
            svals = np.sort(col)
            ranks = (np.arange(1, max_bins) * n) // max_bins
            cuts = np.unique(svals[ranks])
            cuts = cuts[cuts < uniq[-1]]
            nxt = uniq[np.searchsorted(uniq, cuts, side="right")]
            edges = (cuts + nxt) / 2.0
        codes[:, j] = np.searchsorted(edges, col, side="left")
        all_edges.append(edges)
        n_bins[j] = len(edges) + 1
        edge_offset[j + 1] = edge_offset[j] + len(edges)
    flat = np.concatenate(all_edges) if all_edges else np.empty(0)
    return codes, np.ascontiguousarray(flat, dtype=np.float64), edge_offset, n_bins


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X):
        return _kernels.predict_tree(
            self.feature, self.threshold, self.left, self.right, self.value, X
        )


def _grow(binned, rows, y, max_depth, max_features, min_leaf, seed):
    codes, edges, edge_offset, n_bins = binned
    out = _kernels.grow_tree(
        codes, edges, edge_offset, n_bins, rows, y,
        max_depth, max_features, min_leaf, np.uint64(seed),
    )
    return _Tree(*out)


class ForestModel(TransformMixin):
    def __init__(self, trees, transform, p_raw):
        self.trees = trees
        self._init_transform(transform, p_raw)

    def predict(self, X):
        Xt = np.ascontiguousarray(self._expand(X))
        if Xt.shape[0] == 0:
            return np.empty(0)
        acc = np.zeros(Xt.shape[0])
        for tree in self.trees:
            acc += tree.predict(Xt)
        return acc / len(self.trees)


class RandomForestLearner:
    """Bagged CART regression trees with per-split feature subsampling.

    max_features may be an int or "sqrt" (round(sqrt(p)) after the feature
    transform). max_depth 0 grows single-leaf trees that predict their
    bootstrap-sample mean.
    """

    def __init__(self, n_trees=500, max_depth=10, max_features="sqrt", min_leaf=1,
                 bootstrap=True, transform="base", label=None):
        if n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        self.n_trees = int(n_trees)
        self.max_depth = int(max_depth)
        self.max_features = max_features
        self.min_leaf = int(min_leaf)
        self.bootstrap = bool(bootstrap)
        self.transform = transform
        self.label = label or ("rf" if transform == "base" else f"rf_{transform}")

    def _mtry(self, p):
        if self.max_features == "sqrt":
            return max(1, round(math.sqrt(p)))
        return max(1, min(int(self.max_features), p))

    def fit(self, X, y, seed=0):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        Xt = expand_features(X, self.transform)
        n, p = Xt.shape
        binned = bin_features(Xt)
        mtry = self._mtry(p)
        all_rows = np.arange(n, dtype=np.int64)
        trees = []
        for t in range(self.n_trees):
            tree_seed = derive_seed(seed, "tree", t)
            if self.bootstrap:
                rows = _kernels.bootstrap_indices(n, np.uint64(derive_seed(tree_seed, "boot")))
            else:
                rows = all_rows
            trees.append(
                _grow(binned, rows, y, self.max_depth, mtry, self.min_leaf, tree_seed)
            )
        return ForestModel(trees, self.transform, X.shape[1])


class BoostModel(TransformMixin):
    def __init__(self, f0, trees, learning_rate, transform, p_raw, info=None):
        self.f0 = float(f0)
        self.trees = trees
        self.learning_rate = float(learning_rate)
        self._init_transform(transform, p_raw)
        self.info = info or {}

    def predict(self, X):
        Xt = np.ascontiguousarray(self._expand(X))
        if Xt.shape[0] == 0:
            return np.empty(0)
        acc = np.full(Xt.shape[0], self.f0)
        for tree in self.trees:
            acc += self.learning_rate * tree.predict(Xt)
        return acc


@dataclass(frozen=True)
class EarlyStop:
    """Hold out `fraction` of the fit sample, watch validation MSE, stop
    after `patience` consecutive stages whose relative improvement over the
    best MSE so far is below `tol`, and keep the stage count at the
    validation minimum."""

    fraction: float = 0.2
    patience: int = 5
    tol: float = 0.01


class GradientBoostLearner:
    """Stagewise least-squares boosting with depth-limited CART trees.

    The fit starts from the training mean; each stage fits a tree to the
    current residuals and is added scaled by the learning rate.
    """

    def __init__(self, n_trees=1000, learning_rate=0.3, max_depth=3, min_leaf=1,
                 early_stop=EarlyStop(), transform="base", label=None):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        self.n_trees = int(n_trees)
        self.learning_rate = float(learning_rate)
        self.max_depth = int(max_depth)
        self.min_leaf = int(min_leaf)
        self.early_stop = early_stop
        self.transform = transform
        self.label = label or ("gradboost" if transform == "base" else f"gradboost_{transform}")

    def fit(self, X, y, seed=0):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        Xt = np.ascontiguousarray(expand_features(X, self.transform))
        n, p = Xt.shape

        es = self.early_stop
        use_es = es is not None and n >= 5 and self.n_trees > 0
        if use_es:
            rng = make_rng(derive_seed(seed, "esplit"))
            n_val = max(1, int(round(es.fraction * n)))
            perm = rng.permutation(n)
            val_idx, fit_idx = perm[:n_val], perm[n_val:]
        else:
            fit_idx = np.arange(n)
            val_idx = np.empty(0, dtype=np.int64)

        X_fit, y_fit = Xt[fit_idx], y[fit_idx]
        X_val, y_val = Xt[val_idx], y[val_idx]
        binned = bin_features(X_fit)
        rows = np.arange(len(fit_idx), dtype=np.int64)

        f0 = y_fit.mean() if len(fit_idx) else y.mean()
        resid = y_fit - f0
        val_pred = np.full(len(val_idx), f0)

        trees = []
        best_mse = np.inf
        best_stage = 0
        stale = 0
        for t in range(self.n_trees):
            tree = _grow(binned, rows, resid, self.max_depth, p, self.min_leaf,
                         derive_seed(seed, "stage", t))
            trees.append(tree)
            resid -= self.learning_rate * tree.predict(X_fit)
            if use_es:
                val_pred += self.learning_rate * tree.predict(X_val)
                mse = float(np.mean((y_val - val_pred) ** 2))
                if mse < best_mse * (1.0 - es.tol):
                    stale = 0
                else:
                    stale += 1
                if mse < best_mse:
                    best_mse = mse
                    best_stage = t + 1
                if stale >= es.patience:
                    break
        n_stages = best_stage if use_es else len(trees)
        info = {"n_stages": n_stages, "stages_grown": len(trees),
                "early_stopped": use_es and len(trees) < self.n_trees}
        return BoostModel(f0, trees[:n_stages], self.learning_rate,
                          self.transform, X.shape[1], info=info)
