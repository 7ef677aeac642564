"""Fold assignment for cross-fitting.

Observations (or whole clusters) are shuffled with a Fisher-Yates
permutation driven by a seeded PCG64 stream, then dealt round-robin:
the observation at shuffled rank r (1-based) lands in fold
((r - 1) mod K) + 1. This yields exact size balance (max and min fold
sizes differ by at most one) and bit-reproducible assignments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .rng import derive_seed, make_rng


@dataclass(frozen=True)
class FoldAssignment:
    """Fold indices in {1..k} for each of `reps` cross-fit repetitions.

    assignment has shape (n, reps). Imported (user-supplied) assignments
    keep their fold sizes verbatim; generated ones are balanced.
    """

    k: int
    reps: int
    assignment: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        arr = np.asarray(self.assignment, dtype=np.int64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "assignment", arr)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def in_fold(self, rep: int, k: int) -> np.ndarray:
        """Boolean mask of observations in fold k (1-based) of repetition rep (0-based)."""
        return self.assignment[:, rep] == k

    def sizes(self, rep: int) -> np.ndarray:
        return np.bincount(self.assignment[:, rep], minlength=self.k + 1)[1:]


def _deal(order: np.ndarray, k: int) -> np.ndarray:
    """Fold index for each position: rank r (1-based) -> ((r-1) mod k) + 1."""
    out = np.empty(len(order), dtype=np.int64)
    out[order] = np.arange(len(order)) % k + 1
    return out


def assign_folds(
    n: int,
    k: int,
    reps: int = 1,
    seed: int = 0,
    cluster: np.ndarray | None = None,
) -> FoldAssignment:
    """Randomly assign n observations to k folds, `reps` times.

    With cluster ids, whole clusters are shuffled and dealt so that every
    observation of a cluster shares a fold.
    """
    if k < 2:
        raise ConfigError(f"fold count must be at least 2, got {k}")
    if reps < 1:
        raise ConfigError(f"repetition count must be at least 1, got {reps}")
    if cluster is None:
        if k > n:
            raise ConfigError(f"fold count {k} exceeds sample size {n}")
    else:
        cluster = np.asarray(cluster, dtype=np.int64).reshape(-1)
        if len(cluster) != n:
            raise DataError(f"cluster ids have length {len(cluster)}, expected {n}")
        ids = np.unique(cluster)
        if k > len(ids):
            raise ConfigError(f"fold count {k} exceeds number of clusters {len(ids)}")

    assignment = np.empty((n, reps), dtype=np.int64)
    for r in range(reps):
        rng = make_rng(derive_seed(seed, "folds", r))
        if cluster is None:
            order = rng.permutation(n)
            assignment[:, r] = _deal(order, k)
        else:
            # First-appearance order makes co-assignment invariant to how
            # clusters happen to be labeled.
            _, first = np.unique(cluster, return_index=True)
            ids = cluster[np.sort(first)]
            order = rng.permutation(len(ids))
            cluster_fold = _deal(order, k)
            fold_of = dict(zip(ids.tolist(), cluster_fold.tolist()))
            assignment[:, r] = [fold_of[c] for c in cluster.tolist()]
    return FoldAssignment(k=k, reps=reps, assignment=assignment, seed=seed)


def import_folds(assignment: np.ndarray) -> FoldAssignment:
    """Wrap a user-supplied assignment matrix (n,) or (n, reps).

    Fold indices must cover {1..K} with every fold nonempty in every
    repetition; size balance is not required for imported folds.
    """
    arr = np.asarray(assignment)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DataError("fold assignment must be a (n,) or (n, reps) array")
    if not np.allclose(arr, np.rint(arr)):
        raise DataError("fold indices must be integers")
    arr = np.rint(arr).astype(np.int64)
    k = int(arr.max())
    if arr.min() < 1:
        raise DataError(f"fold indices must be >= 1, found {arr.min()}")
    if k < 2:
        raise DataError("imported folds must use at least 2 folds")
    for r in range(arr.shape[1]):
        present = np.unique(arr[:, r])
        for fold in range(1, k + 1):
            if fold not in present:
                raise DataError(f"fold {fold} empty in repetition {r + 1}")
    return FoldAssignment(k=k, reps=arr.shape[1], assignment=arr, seed=None)


def export_folds_csv(folds: FoldAssignment, path: str) -> None:
    """Write the assignment as CSV with one fold-id column per repetition."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"fold_{r + 1}" for r in range(folds.reps)])
        for i in range(folds.n):
            writer.writerow([int(v) for v in folds.assignment[i]])
