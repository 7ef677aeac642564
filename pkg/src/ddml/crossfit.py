"""The cross-fitting engine.

For each fold k, every required conditional expectation is fit on the
complement of k (restricted to the treated/untreated or instrument on/off
arm for split equations) and predicted out-of-sample for every
observation in fold k. Observation i's prediction therefore always comes
from a model that never saw fold k_i.

The flexible IV first stage needs an extra step to respect the law of
iterated expectations: E[D|X,Z] models also store their in-sample fitted
values, and E[D|X] is estimated per fold by regressing those in-sample
fitted values (not raw D) on the controls.

Each task (repetition x fold x equation x learner) derives its own seed,
so parallel and serial execution produce identical results.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import (
    CEF_CODE,
    CefKind,
    Dataset,
    ModelKind,
    cef_arm_mask,
    cef_features,
    cef_target,
)
from .errors import DataError
from .folds import FoldAssignment
from .rng import derive_seed
from .stacking import StackWeights, cls_weights


@dataclass
class CefFit:
    """Cross-fitted predictions for one (equation, learner, repetition)."""

    kind: CefKind
    col: int
    learner_idx: int
    label: str
    rep: int
    oos: np.ndarray                 # (n,) out-of-sample predictions
    fold_mspe: np.ndarray           # (K,) per-fold MSPE on scored rows
    mspe: float                     # overall MSPE on scored rows
    insample: np.ndarray | None = None   # (n, K); fold k's in-sample fit on its training rows


@dataclass
class ShortStackFit:
    """Short-stacked predictions for one equation and repetition."""

    kind: CefKind
    col: int
    rep: int
    preds: np.ndarray
    weights: StackWeights
    fold_mspe: np.ndarray
    mspe: float
    extra: dict = field(default_factory=dict)


@dataclass
class CrossFitResult:
    model: ModelKind
    folds: FoldAssignment
    fits: list
    shortstack: list = field(default_factory=list)

    def get(self, kind: CefKind, col: int, learner_idx: int, rep: int) -> CefFit:
        for fit in self.fits:
            if (fit.kind, fit.col, fit.learner_idx, fit.rep) == (kind, col, learner_idx, rep):
                return fit
        raise KeyError(f"no cross-fit slice for {kind} col={col} learner={learner_idx} rep={rep}")

    def get_shortstack(self, kind: CefKind, col: int, rep: int) -> ShortStackFit:
        for fit in self.shortstack:
            if (fit.kind, fit.col, fit.rep) == (kind, col, rep):
                return fit
        raise KeyError(f"no short-stack slice for {kind} col={col} rep={rep}")

    def learners_for(self, kind: CefKind, col: int, rep: int) -> list:
        out = [f for f in self.fits if (f.kind, f.col, f.rep) == (kind, col, rep)]
        return sorted(out, key=lambda f: f.learner_idx)


def _scored_rows(data: Dataset, kind: CefKind) -> np.ndarray:
    """Rows on which predictions are scored (and short-stack CLS runs):
    the equation's arm for split kinds, every row otherwise."""
    arm = cef_arm_mask(data, kind)
    return np.ones(data.n, dtype=bool) if arm is None else arm


def _mspe_by_fold(target, preds, scored, folds: FoldAssignment, rep: int):
    fold_mspe = np.full(folds.k, np.nan)
    for k in range(1, folds.k + 1):
        rows = folds.in_fold(rep, k) & scored
        if rows.any():
            fold_mspe[k - 1] = float(np.mean((target[rows] - preds[rows]) ** 2))
    overall = float(np.mean((target[scored] - preds[scored]) ** 2))
    return fold_mspe, overall


def task_seed(master_seed: int, rep: int, fold: int, kind: CefKind, col: int,
              learner_idx: int, seed_offset: int = 0) -> int:
    """Per-task seed: a pure function of the task coordinates."""
    return derive_seed(master_seed, "xfit", rep, fold, CEF_CODE[kind], col,
                       learner_idx, seed_offset)


def crossfit_cef(
    data: Dataset,
    kind: CefKind,
    col: int,
    learner,
    folds: FoldAssignment,
    rep: int,
    master_seed: int,
    learner_idx: int = 0,
    seed_offset: int = 0,
    keep_insample: bool = False,
) -> CefFit:
    """Cross-fit one conditional expectation with one learner."""
    target = cef_target(data, kind, col)
    features = cef_features(data, kind)
    arm = cef_arm_mask(data, kind)
    scored = _scored_rows(data, kind)

    oos = np.empty(data.n)
    insample = np.full((data.n, folds.k), np.nan) if keep_insample else None
    for k in range(1, folds.k + 1):
        test = folds.in_fold(rep, k)
        train = ~test
        if arm is not None:
            train = train & arm
            if train.sum() < 2:
                arm_name = kind.value
                raise DataError(
                    f"training complement of fold {k} has {int(train.sum())} "
                    f"observation(s) in the {arm_name} arm; use fewer folds"
                )
        seed = task_seed(master_seed, rep, k, kind, col, learner_idx, seed_offset)
        model = learner.fit(features[train], target[train], seed)
        oos[test] = model.predict(features[test])
        if keep_insample:
            insample[train, k - 1] = model.predict(features[train])

    fold_mspe, mspe = _mspe_by_fold(target, oos, scored, folds, rep)
    return CefFit(kind=kind, col=col, learner_idx=learner_idx, label=learner.label,
                  rep=rep, oos=oos, fold_mspe=fold_mspe, mspe=mspe, insample=insample)


def crossfit_fiv_pair(
    data: Dataset,
    learner,
    folds: FoldAssignment,
    rep: int,
    master_seed: int,
    learner_idx: int = 0,
    seed_offset: int = 0,
) -> tuple[CefFit, CefFit]:
    """The law-of-iterated-expectations first stage for the flexible IV
    model: one learner drives both E[D|X,Z] (with in-sample fits kept) and
    the projection of those in-sample fits onto X.

    Returns (p_fit, m_fit): p_fit carries E[D|X,Z] out-of-sample and
    in-sample predictions; m_fit carries the projected E[D|X]. m_fit's
    MSPE is scored against observed D, the observable proxy for its
    target.
    """
    p_fit = crossfit_cef(
        data, CefKind.D_XZ, 0, learner, folds, rep, master_seed,
        learner_idx=learner_idx, seed_offset=seed_offset, keep_insample=True,
    )

    d = data.d[:, 0]
    x = data.x
    m_oos = np.empty(data.n)
    for k in range(1, folds.k + 1):
        test = folds.in_fold(rep, k)
        train = ~test
        target = p_fit.insample[train, k - 1]
        seed = task_seed(master_seed, rep, k, CefKind.D_X, 0, learner_idx, seed_offset)
        model = learner.fit(x[train], target, seed)
        m_oos[test] = model.predict(x[test])
    scored = np.ones(data.n, dtype=bool)
    fold_mspe, mspe = _mspe_by_fold(d, m_oos, scored, folds, rep)
    m_fit = CefFit(kind=CefKind.D_X, col=0, learner_idx=learner_idx, label=learner.label,
                   rep=rep, oos=m_oos, fold_mspe=fold_mspe, mspe=mspe)
    return p_fit, m_fit


def crossfit_model(
    data: Dataset,
    model: ModelKind,
    cef_learners: dict,
    folds: FoldAssignment,
    master_seed: int,
    seed_offsets: dict | None = None,
    threads: int = 1,
) -> CrossFitResult:
    """Cross-fit every (equation, learner) for every repetition.

    cef_learners maps (CefKind, col) to the list of learner objects for
    that equation. For the flexible IV model the D_XZ list drives both
    D_XZ and the projected D_X (pass the same list under both keys).
    seed_offsets optionally maps (kind, col, learner_idx) to an offset.
    """
    offsets = seed_offsets or {}

    def off(kind, col, idx):
        return offsets.get((kind, col, idx), 0)

    tasks = []
    if model is ModelKind.FIV:
        for rep in range(folds.reps):
            for idx, lrn in enumerate(cef_learners[(CefKind.Y_X, 0)]):
                tasks.append(("cef", rep, CefKind.Y_X, 0, idx, lrn))
            for idx, lrn in enumerate(cef_learners[(CefKind.D_XZ, 0)]):
                tasks.append(("fiv", rep, CefKind.D_XZ, 0, idx, lrn))
    else:
        for rep in range(folds.reps):
            for (kind, col), learners in cef_learners.items():
                for idx, lrn in enumerate(learners):
                    tasks.append(("cef", rep, kind, col, idx, lrn))

    def run(task):
        tag, rep, kind, col, idx, lrn = task
        if tag == "fiv":
            return crossfit_fiv_pair(data, lrn, folds, rep, master_seed,
                                     learner_idx=idx, seed_offset=off(kind, col, idx))
        return crossfit_cef(data, kind, col, lrn, folds, rep, master_seed,
                            learner_idx=idx, seed_offset=off(kind, col, idx))

    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    fits = []
    for out in results:
        if isinstance(out, tuple):
            fits.extend(out)
        else:
            fits.append(out)
    return CrossFitResult(model=model, folds=folds, fits=fits)


def shortstack_all(data: Dataset, result: CrossFitResult, rep: int) -> list[ShortStackFit]:
    """Short-stack every equation of one repetition.

    Non-IV-flexible equations: one constrained regression of the
    equation's regressand on the learners' cross-fitted predictions, over
    the scored (arm) rows, applied to all rows.

    Flexible IV follows the staged recipe: (1) stack E[Y|X] on the full
    sample; (2) per fold, stack D on the in-sample E[D|X,Z] fits over the
    training complement to obtain fold-wise out-of-sample stacked
    predictions, and separately stack D on the cross-fitted E[D|X,Z]
    columns over the full sample; (3) stack the fold-wise stacked
    predictions on the projected E[D|X] columns to combine them.
    """
    folds = result.folds
    out = []
    slots = sorted({(f.kind, f.col) for f in result.fits if f.rep == rep},
                   key=lambda kc: (CEF_CODE[kc[0]], kc[1]))
    if result.model is not ModelKind.FIV:
        for kind, col in slots:
            fits = result.learners_for(kind, col, rep)
            P = np.column_stack([f.oos for f in fits])
            labels = [f.label for f in fits]
            target = cef_target(data, kind, col)
            scored = _scored_rows(data, kind)
            sw = cls_weights(P[scored], target[scored], scope="shortstack", labels=labels)
            preds = P @ sw.weights
            fold_mspe, mspe = _mspe_by_fold(target, preds, scored, folds, rep)
            out.append(ShortStackFit(kind=kind, col=col, rep=rep, preds=preds,
                                     weights=sw, fold_mspe=fold_mspe, mspe=mspe))
        return out

    d = data.d[:, 0]
    scored = np.ones(data.n, dtype=bool)

    # stage 1: E[Y|X]
    y_fits = result.learners_for(CefKind.Y_X, 0, rep)
    P_y = np.column_stack([f.oos for f in y_fits])
    sw_y = cls_weights(P_y, data.y, scope="shortstack", labels=[f.label for f in y_fits])
    preds_y = P_y @ sw_y.weights
    fm, ms = _mspe_by_fold(data.y, preds_y, scored, folds, rep)
    out.append(ShortStackFit(kind=CefKind.Y_X, col=0, rep=rep, preds=preds_y,
                             weights=sw_y, fold_mspe=fm, mspe=ms))

    p_fits = result.learners_for(CefKind.D_XZ, 0, rep)
    m_fits = result.learners_for(CefKind.D_X, 0, rep)
    labels_p = [f.label for f in p_fits]

    # stage 2, fold-wise: weights from in-sample fits on each training
    # complement, applied to that fold's out-of-sample columns
    p_star_folds = np.empty(data.n)
    fold_weights = []
    P_oos = np.column_stack([f.oos for f in p_fits])
    for k in range(1, folds.k + 1):
        test = folds.in_fold(rep, k)
        train = ~test
        P_in = np.column_stack([f.insample[train, k - 1] for f in p_fits])
        sw_k = cls_weights(P_in, d[train], scope=f"fold:{k}", labels=labels_p)
        p_star_folds[test] = P_oos[test] @ sw_k.weights
        fold_weights.append(sw_k)

    # stage 2, full sample: stack D on the cross-fitted E[D|X,Z] columns
    sw_p = cls_weights(P_oos, d, scope="shortstack", labels=labels_p)
    preds_p = P_oos @ sw_p.weights
    fm, ms = _mspe_by_fold(d, preds_p, scored, folds, rep)
    out.append(ShortStackFit(kind=CefKind.D_XZ, col=0, rep=rep, preds=preds_p,
                             weights=sw_p, fold_mspe=fm, mspe=ms,
                             extra={"foldwise_preds": p_star_folds,
                                    "fold_weights": fold_weights}))

    # stage 3: combine the projected E[D|X] columns against the fold-wise
    # stacked first-stage predictions
    P_m = np.column_stack([f.oos for f in m_fits])
    sw_m = cls_weights(P_m, p_star_folds, scope="shortstack",
                       labels=[f.label for f in m_fits])
    preds_m = P_m @ sw_m.weights
    fm, ms = _mspe_by_fold(d, preds_m, scored, folds, rep)
    out.append(ShortStackFit(kind=CefKind.D_X, col=0, rep=rep, preds=preds_m,
                             weights=sw_m, fold_mspe=fm, mspe=ms))
    return out


def mspe_report(result: CrossFitResult) -> list[dict]:
    """Rows of (equation, learner, rep) with overall and per-fold MSPEs."""
    rows = []
    for fit in result.fits:
        rows.append({
            "cef": fit.kind.value,
            "col": fit.col,
            "learner": fit.label,
            "rep": fit.rep + 1,
            "mspe": fit.mspe,
            "fold_mspe": [None if np.isnan(v) else float(v) for v in fit.fold_mspe],
        })
    for fit in result.shortstack:
        rows.append({
            "cef": fit.kind.value,
            "col": fit.col,
            "learner": "shortstack",
            "rep": fit.rep + 1,
            "mspe": fit.mspe,
            "fold_mspe": [None if np.isnan(v) else float(v) for v in fit.fold_mspe],
        })
    return rows
