"""End-to-end orchestration: folds, cross-fitting, ensembling, estimation.

A PipelineSpec declares the model, the learner menu per input role
(outcome, treatment, instrument), fold and repetition counts, ensembling
choices, and inference options. run_pipeline executes, for each
cross-fit repetition:

  1. fold assignment (random, cluster-randomized, or imported),
  2. cross-fitting of every (equation, learner),
  3. optional per-fold stacking and/or short-stacking,
  4. second-stage estimation for the minimum-MSPE learner combination
     (the "opt" spec), optionally every learner combination, the stacked
     spec, and the short-stacked spec,

then aggregates each spec across repetitions by both the median and mean
rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .crossfit import CrossFitResult, crossfit_model, mspe_report, shortstack_all
from .data import CEF_CODE, CefKind, Dataset, ModelKind, cef_arm_mask, cef_target
from .errors import ConfigError, DataError, EstimationError
from .estimators import (
    Estimate,
    aggregate_reps,
    estimate_ate,
    estimate_atet,
    estimate_fiv,
    estimate_late,
    estimate_partial,
    estimate_pliv,
)
from .folds import FoldAssignment, assign_folds
from .rng import derive_seed
from .stacking import cls_weights, single_best_weights

STACK_MODES = ("none", "cls", "single_best")
AGG_MODES = ("median", "mean")


@dataclass
class PipelineSpec:
    """Everything needed to reproduce one estimation run."""

    model: ModelKind
    y_learners: list
    d_learners: list
    z_learners: list = field(default_factory=list)
    k: int = 5
    reps: int = 1
    seed: int = 0
    shortstack: bool = False
    stacking: str = "none"
    stack_v: int = 5
    allcombos: bool = False
    effect: str = "ate"
    trim: float = 0.01
    vce: str = "hc1"
    constant: bool = True
    cluster_folds: bool = False
    aggregate: str = "median"
    fold_assignment: FoldAssignment | None = None

    def __post_init__(self):
        if isinstance(self.model, str):
            self.model = ModelKind(self.model)
        if self.stacking not in STACK_MODES:
            raise ConfigError(f"stacking must be one of {STACK_MODES}")
        if self.aggregate not in AGG_MODES:
            raise ConfigError(f"aggregate must be one of {AGG_MODES}")
        if self.effect not in ("ate", "atet"):
            raise ConfigError("effect must be 'ate' or 'atet'")
        if not self.y_learners:
            raise ConfigError("at least one outcome learner is required")
        if not self.d_learners:
            raise ConfigError("at least one treatment learner is required")
        needs_z = self.model in (ModelKind.IV, ModelKind.INTERACTIVE_IV)
        if needs_z and not self.z_learners:
            raise ConfigError(f"model '{self.model.value}' requires instrument learners")
        if self.stacking != "none" and self.stack_v < 2:
            raise ConfigError("per-fold stacking needs stack_v >= 2")


def _role_specs(spec: PipelineSpec, role: str) -> list:
    return {"y": spec.y_learners, "d": spec.d_learners, "z": spec.z_learners}[role]


def _choice_groups(spec: PipelineSpec, data: Dataset) -> list[dict]:
    """Groups of CEF slots that share one learner choice.

    The outcome learner drives both arms of a split outcome equation, and
    the treatment learner drives both arms of a split first stage (and,
    for the flexible IV model, the projected E[D|X]).
    """
    model = spec.model
    groups = []
    if model is ModelKind.PARTIAL:
        groups.append({"name": "y", "role": "y", "slots": [(CefKind.Y_X, 0)]})
        for j in range(data.p_d):
            nm = "d" if data.p_d == 1 else f"d{j + 1}"
            groups.append({"name": nm, "role": "d", "slots": [(CefKind.D_X, j)]})
    elif model is ModelKind.INTERACTIVE:
        groups.append({"name": "y", "role": "y",
                       "slots": [(CefKind.Y_X_D0, 0), (CefKind.Y_X_D1, 0)]})
        groups.append({"name": "d", "role": "d", "slots": [(CefKind.D_X, 0)]})
    elif model is ModelKind.IV:
        groups.append({"name": "y", "role": "y", "slots": [(CefKind.Y_X, 0)]})
        for j in range(data.p_d):
            nm = "d" if data.p_d == 1 else f"d{j + 1}"
            groups.append({"name": nm, "role": "d", "slots": [(CefKind.D_X, j)]})
        for j in range(data.p_z):
            nm = "z" if data.p_z == 1 else f"z{j + 1}"
            groups.append({"name": nm, "role": "z", "slots": [(CefKind.Z_X, j)]})
    elif model is ModelKind.FIV:
        groups.append({"name": "y", "role": "y", "slots": [(CefKind.Y_X, 0)]})
        groups.append({"name": "d", "role": "d",
                       "slots": [(CefKind.D_XZ, 0), (CefKind.D_X, 0)]})
    elif model is ModelKind.INTERACTIVE_IV:
        groups.append({"name": "y", "role": "y",
                       "slots": [(CefKind.Y_X_Z0, 0), (CefKind.Y_X_Z1, 0)]})
        groups.append({"name": "d", "role": "d",
                       "slots": [(CefKind.D_XZ0, 0), (CefKind.D_XZ1, 0)]})
        groups.append({"name": "z", "role": "z", "slots": [(CefKind.Z_X, 0)]})
    return groups


def _cef_learner_map(spec: PipelineSpec, data: Dataset) -> tuple[dict, dict]:
    """Map each CEF slot to built learner objects, plus seed offsets."""
    built = {role: [ls.build() for ls in _role_specs(spec, role)]
             for role in ("y", "d", "z")}
    cef_learners = {}
    offsets = {}
    for group in _choice_groups(spec, data):
        role = group["role"]
        for slot in group["slots"]:
            if spec.model is ModelKind.FIV and slot[0] is CefKind.D_X:
                continue  # paired: driven by the D_XZ task
            cef_learners[slot] = built[role]
            for idx, ls in enumerate(_role_specs(spec, role)):
                offsets[(slot[0], slot[1], idx)] = ls.seed_offset
    return cef_learners, offsets


@dataclass
class StackInfo:
    """Per-fold stacking output for one equation and repetition."""

    kind: CefKind
    col: int
    rep: int
    preds: np.ndarray
    fold_weights: list
    insample: np.ndarray | None = None


@dataclass
class PipelineResult:
    spec: PipelineSpec
    crossfit: CrossFitResult
    estimates: list
    aggregates: list
    opt_labels: dict
    stack_info: list = field(default_factory=list)

    def mspe_rows(self) -> list[dict]:
        return mspe_report(self.crossfit)


def _stack_rep(data: Dataset, spec: PipelineSpec, result: CrossFitResult,
               rep: int) -> list[StackInfo]:
    """Per-fold stacking: run V-fold CV inside each training complement to
    estimate simplex weights, then combine the already cross-fitted
    out-of-sample columns with the fold's weights."""
    folds = result.folds
    weight_solver = cls_weights if spec.stacking == "cls" else single_best_weights
    out = []
    groups = _choice_groups(spec, data)
    built = {role: [ls.build() for ls in _role_specs(spec, role)]
             for role in ("y", "d", "z")}

    for group in groups:
        learners = built[group["role"]]
        for kind, col in group["slots"]:
            if spec.model is ModelKind.FIV and kind is CefKind.D_X:
                continue  # handled below, paired with D_XZ
            fits = result.learners_for(kind, col, rep)
            target = cef_target(data, kind, col)
            features = data.xz() if kind is CefKind.D_XZ else data.x
            arm = cef_arm_mask(data, kind)
            preds = np.empty(data.n)
            insample = (np.full((data.n, folds.k), np.nan)
                        if (spec.model is ModelKind.FIV and kind is CefKind.D_XZ) else None)
            fold_ws = []
            for k in range(1, folds.k + 1):
                test = folds.in_fold(rep, k)
                train = ~test if arm is None else (~test) & arm
                rows = np.where(train)[0]
                P_cv = _cv_prediction_matrix(
                    features[rows], target[rows], learners,
                    spec.stack_v, derive_seed(spec.seed, "stack", rep, k, CEF_CODE[kind], col),
                )
                sw = weight_solver(P_cv, target[rows], scope=f"fold:{k}",
                                   labels=[l.label for l in learners])
                fold_ws.append(sw)
                P_oos = np.column_stack([f.oos[test] for f in fits])
                preds[test] = P_oos @ sw.weights
                if insample is not None:
                    P_in = np.column_stack([f.insample[train, k - 1] for f in fits])
                    insample[train, k - 1] = P_in @ sw.weights
            out.append(StackInfo(kind=kind, col=col, rep=rep, preds=preds,
                                 fold_weights=fold_ws, insample=insample))

    if spec.model is ModelKind.FIV:
        # Projection step for the stacked first stage: per fold, each
        # treatment learner refits on the stacked in-sample values, and the
        # per-fold weights are re-estimated against that stacked target.
        learners = built["d"]
        p_stack = next(si for si in out if si.kind is CefKind.D_XZ)
        preds = np.empty(data.n)
        fold_ws = []
        for k in range(1, folds.k + 1):
            test = folds.in_fold(rep, k)
            train = ~test
            rows = np.where(train)[0]
            target = p_stack.insample[rows, k - 1]
            cols = []
            for idx, lrn in enumerate(learners):
                seed = derive_seed(spec.seed, "stackproj", rep, k, idx)
                model = lrn.fit(data.x[rows], target, seed)
                cols.append(model.predict(data.x))
            P_all = np.column_stack(cols)
            P_cv = _cv_prediction_matrix(
                data.x[rows], target, learners, spec.stack_v,
                derive_seed(spec.seed, "stackprojcv", rep, k),
            )
            sw = weight_solver(P_cv, target, scope=f"fold:{k}",
                               labels=[l.label for l in learners])
            fold_ws.append(sw)
            preds[test] = P_all[test] @ sw.weights
        out.append(StackInfo(kind=CefKind.D_X, col=0, rep=rep, preds=preds,
                             fold_weights=fold_ws))
    return out


def _cv_prediction_matrix(X, y, learners, v, seed):
    """Cross-validated predictions of each learner on one training set."""
    n = len(y)
    cv = assign_folds(n, min(v, n), 1, derive_seed(seed, "cv")).assignment[:, 0]
    cols = []
    for j, learner in enumerate(learners):
        col = np.empty(n)
        for k in range(1, cv.max() + 1):
            val = cv == k
            model = learner.fit(X[~val], y[~val], derive_seed(seed, "cvfit", j, k))
            col[val] = model.predict(X[val])
        cols.append(col)
    return np.column_stack(cols)


def _estimate_one(data: Dataset, spec: PipelineSpec, preds: dict, label: str,
                  rep: int) -> list[Estimate]:
    """Second stage for one named combination of prediction columns."""
    y = data.y
    cluster = data.cluster if spec.vce == "cluster" else None
    model = spec.model
    common = dict(vce=spec.vce, cluster=cluster, spec=label)
    try:
        if model is ModelKind.PARTIAL:
            m = np.column_stack([preds[(CefKind.D_X, j)] for j in range(data.p_d)])
            ests = estimate_partial(y, data.d, preds[(CefKind.Y_X, 0)], m,
                                    constant=spec.constant,
                                    target_names=data.names["d"], **common)
        elif model is ModelKind.INTERACTIVE:
            if spec.effect == "ate":
                ests = [estimate_ate(y, data.d[:, 0], preds[(CefKind.Y_X_D0, 0)],
                                     preds[(CefKind.Y_X_D1, 0)], preds[(CefKind.D_X, 0)],
                                     trim=spec.trim, target_names=data.names["d"], **common)]
            else:
                ests = [estimate_atet(y, data.d[:, 0], preds[(CefKind.Y_X_D0, 0)],
                                      preds[(CefKind.D_X, 0)], trim=spec.trim,
                                      target_names=data.names["d"], **common)]
        elif model is ModelKind.IV:
            m = np.column_stack([preds[(CefKind.D_X, j)] for j in range(data.p_d)])
            r = np.column_stack([preds[(CefKind.Z_X, j)] for j in range(data.p_z)])
            ests = estimate_pliv(y, data.d, data.z, preds[(CefKind.Y_X, 0)], m, r,
                                 constant=spec.constant,
                                 target_names=data.names["d"], **common)
        elif model is ModelKind.FIV:
            ests = [estimate_fiv(y, data.d[:, 0], preds[(CefKind.Y_X, 0)],
                                 preds[(CefKind.D_XZ, 0)], preds[(CefKind.D_X, 0)],
                                 constant=spec.constant,
                                 target_names=data.names["d"], **common)]
        else:
            ests = [estimate_late(y, data.d[:, 0], data.z[:, 0],
                                  preds[(CefKind.Y_X_Z0, 0)], preds[(CefKind.Y_X_Z1, 0)],
                                  preds[(CefKind.D_XZ0, 0)], preds[(CefKind.D_XZ1, 0)],
                                  preds[(CefKind.Z_X, 0)], trim=spec.trim,
                                  target_names=data.names["d"], **common)]
    except EstimationError as exc:
        raise type(exc)(f"spec {label!r}, repetition {rep + 1}: {exc}") from exc
    for est in ests:
        est.rep = rep + 1
    return ests


def run_pipeline(data: Dataset, spec: PipelineSpec, threads: int = 1) -> PipelineResult:
    """Execute the full workflow for one dataset and spec."""
    data.validate_for_model(spec.model)

    if spec.fold_assignment is not None:
        folds = spec.fold_assignment
        if folds.n != data.n:
            raise DataError(f"imported folds cover {folds.n} rows, data has {data.n}")
    else:
        cluster = data.cluster if spec.cluster_folds else None
        if spec.cluster_folds and data.cluster is None:
            raise DataError("cluster-randomized folds require a cluster role")
        folds = assign_folds(data.n, spec.k, spec.reps, derive_seed(spec.seed, "folds"),
                             cluster=cluster)

    cef_learners, offsets = _cef_learner_map(spec, data)
    result = crossfit_model(data, spec.model, cef_learners, folds, spec.seed,
                            seed_offsets=offsets, threads=threads)

    stack_info = []
    estimates = []
    opt_labels = {}
    groups = _choice_groups(spec, data)

    for rep in range(folds.reps):
        if spec.shortstack:
            result.shortstack.extend(shortstack_all(data, result, rep))
        if spec.stacking != "none":
            stack_info.extend(_stack_rep(data, spec, result, rep))

        # Minimum-MSPE choice per group: lowest row-weighted MSPE summed
        # over the group's (possibly tied) equations.
        def group_mspe(group, idx):
            total = 0.0
            for kind, col in group["slots"]:
                fit = result.get(kind, col, idx, rep)
                total += fit.mspe
            return total

        opt_choice = {}
        for group in groups:
            n_learners = len(_role_specs(spec, group["role"]))
            scores = [group_mspe(group, idx) for idx in range(n_learners)]
            opt_choice[group["name"]] = int(np.argmin(scores))

        def combo_label(choice):
            parts = []
            for group in groups:
                lab = _role_specs(spec, group["role"])[choice[group["name"]]].report_label
                parts.append(f"{group['name']}:{lab}")
            return " ".join(parts)

        def combo_preds(choice):
            preds = {}
            for group in groups:
                idx = choice[group["name"]]
                for slot in group["slots"]:
                    preds[slot] = result.get(slot[0], slot[1], idx, rep).oos
            return preds

        opt_label = combo_label(opt_choice)
        opt_labels[rep + 1] = opt_label

        if spec.allcombos:
            ranges = [range(len(_role_specs(spec, g["role"]))) for g in groups]
            for combo in product(*ranges):
                choice = {g["name"]: idx for g, idx in zip(groups, combo)}
                estimates.extend(
                    _estimate_one(data, spec, combo_preds(choice), combo_label(choice), rep)
                )
        else:
            estimates.extend(
                _estimate_one(data, spec, combo_preds(opt_choice), opt_label, rep)
            )

        if spec.stacking != "none":
            preds = {(si.kind, si.col): si.preds for si in stack_info if si.rep == rep}
            estimates.extend(_estimate_one(data, spec, preds, "[stack]", rep))
        if spec.shortstack:
            preds = {(sf.kind, sf.col): sf.preds
                     for sf in result.shortstack if sf.rep == rep}
            estimates.extend(_estimate_one(data, spec, preds, "[shortstack]", rep))

    aggregates = []
    targets = []
    for est in estimates:
        if est.target not in targets:
            targets.append(est.target)

    def aggregate(rows, label):
        for mode in ("median", "mean"):
            agg = aggregate_reps(rows, mode)
            agg.spec = label
            aggregates.append(agg)

    for target in targets:
        # the per-rep minimum-MSPE specs (possibly different learners per rep)
        opt_rows = [e for e in estimates
                    if e.target == target and e.spec == opt_labels[e.rep]]
        if opt_rows:
            aggregate(opt_rows, "[min-mse]")
        for label in ("[stack]", "[shortstack]"):
            rows = [e for e in estimates if e.target == target and e.spec == label]
            if rows:
                aggregate(rows, label)
        if spec.allcombos:
            combo_labels = []
            for est in estimates:
                if est.spec not in combo_labels and not est.spec.startswith("["):
                    combo_labels.append(est.spec)
            for label in combo_labels:
                rows = [e for e in estimates if e.target == target and e.spec == label]
                if len({e.rep for e in rows}) == folds.reps:
                    aggregate(rows, label)

    return PipelineResult(spec=spec, crossfit=result, estimates=estimates,
                          aggregates=aggregates, opt_labels=opt_labels,
                          stack_info=stack_info)
