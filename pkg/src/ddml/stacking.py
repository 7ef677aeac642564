"""Combining base learners: constrained least squares stacking, single-best
selection, and short-stacking.

The meta weights solve

    min_w ||y - P w||^2   s.t.  w_j >= 0,  sum_j w_j = 1,

where the columns of P are base-learner predictions. The solver is a
primal active-set method for this small quadratic program: starting from
the best single column, it repeatedly solves the equality-constrained
least squares problem on the passive (nonzero-allowed) set, steps back to
feasibility when a coordinate would go negative, and frees the zero
coordinate with the most negative reduced gradient until the KKT
conditions hold. The solution is exact up to solver tolerance, so the
returned objective can never exceed the best single column's.

Regular stacking estimates weights from V-fold cross-validated
predictions inside a training sample and then combines the learners
refit on the full training sample. Short-stacking runs one constrained
regression of the target on cross-fitted (out-of-fold) predictions over
the whole estimation sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError
from .folds import assign_folds
from .rng import derive_seed

_FEAS_TOL = 1e-12
_DUAL_TOL = 1e-10


@dataclass
class StackWeights:
    """Simplex weights over J learners plus the achieved objective.

    scope is "fold:<k>" for per-fold stacking weights, "train" for a
    one-off training-sample solve, or "shortstack".
    """

    weights: np.ndarray
    scope: str
    objective: float
    labels: list[str] = field(default_factory=list)
    uniform_fallback: bool = False
    failed: list[str] = field(default_factory=list)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(w) < 1:
            raise EstimationError("stack weights need at least one learner")
        if np.any(w < -1e-9) or abs(w.sum() - 1.0) > 1e-8:
            raise EstimationError("stack weights violate the simplex constraints")
        w = np.clip(w, 0.0, None)
        w = w / w.sum()
        object.__setattr__(self, "weights", w)


def _solve_eq_ls(P, y, passive):
    """Least squares of y on P[:, passive] subject to the weights summing
    to one, via the KKT system; minimum-norm on singular systems."""
    cols = np.where(passive)[0]
    k = len(cols)
    gram = P[:, cols].T @ P[:, cols]
    rhs = P[:, cols].T @ y
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = 2.0 * gram
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    vec = np.concatenate([2.0 * rhs, [1.0]])
    try:
        sol = np.linalg.solve(kkt, vec)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(kkt, vec, rcond=None)
    w = np.zeros(P.shape[1])
    w[cols] = sol[:k]
    return w


def simplex_lsq(P: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact minimizer of ||y - Pw||^2 over the probability simplex."""
    P = np.asarray(P, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n, J = P.shape
    if J == 1:
        return np.ones(1)

    sse = np.sum((y[:, None] - P) ** 2, axis=0)
    w = np.zeros(J)
    w[int(np.argmin(sse))] = 1.0
    passive = w > 0.0

    for _ in range(4 * J * (J + 2)):
        w_trial = _solve_eq_ls(P, y, passive)
        if w_trial[passive].min() < -_FEAS_TOL:
            # Step from w toward w_trial until the first passive coordinate
            # hits zero; that coordinate leaves the passive set.
            delta = w_trial - w
            shrink = (delta < -_FEAS_TOL) & passive
            with np.errstate(divide="ignore", invalid="ignore"):
                alphas = np.where(shrink, -w / np.where(shrink, delta, 1.0), np.inf)
            alpha = min(1.0, float(alphas.min()))
            w = w + alpha * delta
            blocked = shrink & (alphas <= alpha + _FEAS_TOL)
            w[blocked] = 0.0
            passive[blocked] = False
            if not passive.any():  # numerical corner: restart from best vertex
                w = np.zeros(J)
                w[int(np.argmin(sse))] = 1.0
                passive = w > 0.0
            continue
        w = np.clip(w_trial, 0.0, None)
        # KKT: reduced gradients of zero coordinates must be nonnegative.
        grad = 2.0 * (P.T @ (P @ w - y))
        mu = -float(np.mean(grad[passive]))
        reduced = grad + mu
        candidates = np.where(~passive)[0]
        if len(candidates) == 0:
            break
        worst = candidates[int(np.argmin(reduced[candidates]))]
        scale = max(1.0, float(np.abs(grad).max()))
        if reduced[worst] >= -_DUAL_TOL * scale:
            break
        passive[worst] = True
    return w / w.sum()


def cls_weights(P: np.ndarray, y: np.ndarray, scope: str = "train",
                labels: list[str] | None = None) -> StackWeights:
    """Constrained least squares stacking weights.

    Degenerate all-zero prediction matrices fall back to uniform weights
    with a warning flag set.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 1:
        P = P.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(P)):
        raise EstimationError("prediction matrix contains non-finite values")
    J = P.shape[1]
    labels = labels or [f"learner{j + 1}" for j in range(J)]
    if not np.any(P != 0.0):
        w = np.full(J, 1.0 / J)
        obj = float(np.sum((y - P @ w) ** 2))
        return StackWeights(w, scope, obj, labels, uniform_fallback=True)
    w = simplex_lsq(P, y)
    obj = float(np.sum((y - P @ w) ** 2))
    return StackWeights(w, scope, obj, labels)


def single_best_weights(P: np.ndarray, y: np.ndarray, scope: str = "train",
                        labels: list[str] | None = None) -> StackWeights:
    """One-hot weight on the column with the smallest squared error; ties
    break toward the lowest learner index."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 1:
        P = P.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    J = P.shape[1]
    labels = labels or [f"learner{j + 1}" for j in range(J)]
    sse = np.sum((y[:, None] - P) ** 2, axis=0)
    w = np.zeros(J)
    w[int(np.argmin(sse))] = 1.0
    return StackWeights(w, scope, float(sse.min()), labels)


def short_stack(cross_fitted_P: np.ndarray, y: np.ndarray,
                labels: list[str] | None = None) -> StackWeights:
    """CLS over cross-fitted predictions: one weight set for the sample."""
    sw = cls_weights(cross_fitted_P, y, scope="shortstack", labels=labels)
    return sw


class StackedModel:
    """Convex combination of fitted base models."""

    def __init__(self, models, weights: StackWeights):
        self.models = models
        self.weights = weights

    def predict(self, X):
        w = self.weights.weights
        acc = None
        for wj, model in zip(w, self.models):
            pred = model.predict(X)
            acc = wj * pred if acc is None else acc + wj * pred
        return acc


def stack_cef(X, y, learners, v: int = 5, seed: int = 0, mode: str = "cls",
              rows_for_weights: np.ndarray | None = None):
    """Fit a stacked conditional-expectation estimator on one training set.

    Each base learner's V-fold cross-validated predictions feed the
    constrained ("cls") or single-best weight solve; the base learners are
    then refit on the full training sample and combined. Learners whose
    fit raises EstimationError are dropped and the weights renormalize
    over the survivors (recorded in StackWeights.failed).

    rows_for_weights optionally restricts the weight regression to a
    boolean row mask (used for arm-restricted equations).

    Returns (StackedModel, StackWeights).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = len(y)
    if v < 2:
        raise EstimationError("stacking needs at least 2 cross-validation folds")
    cv = assign_folds(n, v, 1, derive_seed(seed, "stackcv")).assignment[:, 0]

    labels, preds, models, failed = [], [], [], []
    for j, learner in enumerate(learners):
        try:
            col = np.empty(n)
            for k in range(1, v + 1):
                val = cv == k
                model = learner.fit(X[~val], y[~val], derive_seed(seed, "cv", j, k))
                col[val] = model.predict(X[val])
            full = learner.fit(X, y, derive_seed(seed, "full", j))
        except EstimationError:
            failed.append(learner.label)
            continue
        labels.append(learner.label)
        preds.append(col)
        models.append(full)

    if not models:
        raise EstimationError("every base learner failed during stacking")
    P = np.column_stack(preds)
    target = y
    if rows_for_weights is not None:
        P = P[rows_for_weights]
        target = y[rows_for_weights]
    if mode == "cls":
        sw = cls_weights(P, target, scope="train", labels=labels)
    elif mode == "single_best":
        sw = single_best_weights(P, target, scope="train", labels=labels)
    else:
        raise EstimationError(f"unknown stacking mode {mode!r}")
    sw.failed = failed
    return StackedModel(models, sw), sw
