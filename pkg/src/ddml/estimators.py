"""Second-stage causal estimators and inference.

Partially linear variants regress the residualized outcome on the
residualized treatment(s) (with instruments, two-stage least squares on
residualized variables), including a constant by default since
cross-fitted residuals need not be exactly mean zero. Standard errors are
the usual linear-regression / IV sandwich forms (classical, HC0, HC1,
HC3, or cluster-robust with the standard G/(G-1)*(n-1)/(n-k) correction).

The interactive estimators average a doubly robust score per observation;
their standard errors treat the score as an influence function:

    se^2 = (1/n) * Var(psi_i)            (heteroskedasticity-robust)
    se^2 = G/(G-1) * (1/n^2) * sum_g S_g^2,  S_g = sum_{i in g}(psi_i - mean)
                                         (cluster-robust)

For the local effect ratio estimator with numerator terms a_i and
denominator terms b_i, psi_i = (a_i - theta * b_i) / mean(b).

Propensity-type predictions (the treatment propensity in the interactive
model, the instrument propensity in the interactive IV model) are clipped
symmetrically away from 0 and 1 before use; outcome predictions are never
trimmed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import ModelKind
from .errors import DegenerateError, EstimationError

Z975 = 1.959963984540054
VCE_KINDS = ("classical", "hc0", "hc1", "hc3", "cluster")
_DEGENERATE_REL_TOL = 1e-12


@dataclass(frozen=True)
class TrimPolicy:
    """Symmetric clipping of estimated propensities into [lower, 1-lower]."""

    lower: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.lower < 0.5:
            raise EstimationError(f"trim bound must lie in (0, 0.5), got {self.lower}")

    def apply(self, p: np.ndarray) -> tuple[np.ndarray, int]:
        clipped = np.clip(p, self.lower, 1.0 - self.lower)
        return clipped, int(np.sum(clipped != p))


@dataclass
class Estimate:
    """One point estimate with its standard error and provenance."""

    theta: float
    se: float
    model: ModelKind
    spec: str
    rep: int | str          # 1-based repetition, or "mn"/"md" aggregates
    n_used: int
    vce: str
    target: str = "d"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise EstimationError(f"estimate for {self.spec!r} is not finite")
        if not (math.isfinite(self.se) and self.se >= 0.0):
            raise EstimationError(f"standard error for {self.spec!r} is invalid")

    def ci(self) -> tuple[float, float]:
        return self.theta - Z975 * self.se, self.theta + Z975 * self.se

    def zstat(self) -> float:
        return self.theta / self.se

    def pvalue(self) -> float:
        return math.erfc(abs(self.zstat()) / math.sqrt(2.0))


def _check_vce(vce: str, cluster: np.ndarray | None):
    if vce not in VCE_KINDS:
        raise EstimationError(f"unknown vce {vce!r} (expected one of {VCE_KINDS})")
    if vce == "cluster":
        if cluster is None:
            raise EstimationError("vce 'cluster' requires cluster ids")
        if len(np.unique(cluster)) < 2:
            raise EstimationError("cluster-robust inference needs at least 2 clusters")


def _ols_cov(X: np.ndarray, e: np.ndarray, XtX_inv: np.ndarray, vce: str,
             cluster: np.ndarray | None) -> np.ndarray:
    n, k = X.shape
    if vce == "classical":
        sigma2 = float(e @ e) / (n - k)
        return sigma2 * XtX_inv
    if vce == "cluster":
        ids = np.unique(cluster)
        meat = np.zeros((k, k))
        for g in ids:
            sg = (X[cluster == g] * e[cluster == g, None]).sum(axis=0)
            meat += np.outer(sg, sg)
        G = len(ids)
        c = (G / (G - 1)) * ((n - 1) / (n - k))
        return c * XtX_inv @ meat @ XtX_inv
    if vce == "hc0":
        w = e ** 2
    elif vce == "hc1":
        w = e ** 2 * (n / (n - k))
    elif vce == "hc3":
        h = np.einsum("ij,jk,ik->i", X, XtX_inv, X)
        w = (e / (1.0 - h)) ** 2
    meat = (X * w[:, None]).T @ X
    return XtX_inv @ meat @ XtX_inv


def linear_regression(X: np.ndarray, y: np.ndarray, vce: str = "hc1",
                      cluster: np.ndarray | None = None,
                      constant: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """OLS with a sandwich covariance. Returns (beta, cov); the constant,
    when included, is the last column."""
    _check_vce(vce, cluster)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if constant:
        X = np.column_stack([X, np.ones(len(y))])
    XtX = X.T @ X
    try:
        XtX_inv = np.linalg.inv(XtX)
    except np.linalg.LinAlgError:
        raise DegenerateError("singular design in the estimation stage") from None
    beta = XtX_inv @ (X.T @ y)
    e = y - X @ beta
    cov = _ols_cov(X, e, XtX_inv, vce, cluster)
    return beta, cov


def iv_regression(y: np.ndarray, X_endog: np.ndarray, Z_inst: np.ndarray,
                  vce: str = "hc1", cluster: np.ndarray | None = None,
                  constant: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Two-stage least squares with a sandwich covariance.

    Returns (beta, cov) for the endogenous regressors (constant last when
    included). Residuals use the structural regressors, the meat uses the
    projected regressors, as in standard IV sandwich estimators.
    """
    _check_vce(vce, cluster)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    X = np.asarray(X_endog, dtype=np.float64)
    Z = np.asarray(Z_inst, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if Z.ndim == 1:
        Z = Z.reshape(-1, 1)
    n = len(y)
    if Z.shape[1] < X.shape[1]:
        raise EstimationError(
            f"under-identified: {Z.shape[1]} instrument(s) for {X.shape[1]} regressor(s)"
        )
    if constant:
        X = np.column_stack([X, np.ones(n)])
        Z = np.column_stack([Z, np.ones(n)])
    ZtZ = Z.T @ Z
    try:
        Xhat = Z @ np.linalg.solve(ZtZ, Z.T @ X)
    except np.linalg.LinAlgError:
        raise DegenerateError("collinear instruments in the estimation stage") from None
    A = Xhat.T @ X
    try:
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise DegenerateError(
            "weak or collinear first stage: projected regressors are rank deficient"
        ) from None
    beta = A_inv @ (Xhat.T @ y)
    e = y - X @ beta
    k = X.shape[1]
    if vce == "classical":
        sigma2 = float(e @ e) / (n - k)
        cov = sigma2 * A_inv
    elif vce == "cluster":
        ids = np.unique(cluster)
        meat = np.zeros((k, k))
        for g in ids:
            sg = (Xhat[cluster == g] * e[cluster == g, None]).sum(axis=0)
            meat += np.outer(sg, sg)
        G = len(ids)
        c = (G / (G - 1)) * ((n - 1) / (n - k))
        cov = c * A_inv @ meat @ A_inv.T
    else:
        if vce == "hc0":
            w = e ** 2
        elif vce == "hc1":
            w = e ** 2 * (n / (n - k))
        elif vce == "hc3":
            h = np.einsum("ij,jk,ik->i", Xhat, A_inv, Xhat)
            w = (e / (1.0 - h)) ** 2
        meat = (Xhat * w[:, None]).T @ Xhat
        cov = A_inv @ meat @ A_inv.T
    return beta, cov


def _influence_se(psi: np.ndarray, vce: str, cluster: np.ndarray | None) -> float:
    _check_vce(vce, cluster)
    n = len(psi)
    centered = psi - psi.mean()
    if vce == "cluster":
        ids = np.unique(cluster)
        ssq = sum(float(centered[cluster == g].sum()) ** 2 for g in ids)
        G = len(ids)
        return math.sqrt((G / (G - 1)) * ssq) / n
    # classical/hc* coincide for a sample-mean estimator
    return float(np.std(centered, ddof=1)) / math.sqrt(n)


def _names(p_d: int, target_names=None):
    if target_names is not None:
        return list(target_names)
    return ["d"] if p_d == 1 else [f"d{j + 1}" for j in range(p_d)]


def estimate_partial(y, d, ell_hat, m_hat, vce="hc1", cluster=None, constant=True,
                     spec="", target_names=None) -> list[Estimate]:
    """Partially linear estimator: regress (Y - E[Y|X]-hat) on the columns
    (D_j - E[D_j|X]-hat); the slope on each residualized treatment is that
    treatment's effect."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d = np.asarray(d, dtype=np.float64)
    if d.ndim == 1:
        d = d.reshape(-1, 1)
    m = np.asarray(m_hat, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    ell = np.asarray(ell_hat, dtype=np.float64).reshape(-1)
    if m.shape != d.shape:
        raise EstimationError("one treatment-CEF column is required per treatment")

    y_res = y - ell
    d_res = d - m
    for j in range(d.shape[1]):
        col = d_res[:, j] - d_res[:, j].mean() if constant else d_res[:, j]
        scale = max(1.0, float(np.mean(d[:, j] ** 2)))
        if float(np.mean(col ** 2)) < _DEGENERATE_REL_TOL * scale:
            raise DegenerateError(
                f"residualized treatment {j + 1} has (near) zero variance; "
                "the treatment is explained by the controls"
            )
    beta, cov = linear_regression(d_res, y_res, vce=vce, cluster=cluster, constant=constant)
    names = _names(d.shape[1], target_names)
    return [
        Estimate(theta=float(beta[j]), se=float(math.sqrt(cov[j, j])),
                 model=ModelKind.PARTIAL, spec=spec, rep=1, n_used=len(y),
                 vce=vce, target=names[j])
        for j in range(d.shape[1])
    ]


def estimate_pliv(y, d, z, ell_hat, m_hat, r_hat, vce="hc1", cluster=None,
                  constant=True, spec="", target_names=None) -> list[Estimate]:
    """Partially linear IV estimator: 2SLS of the residualized outcome on
    residualized treatment(s), instrumented by residualized instrument(s)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d = np.asarray(d, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if d.ndim == 1:
        d = d.reshape(-1, 1)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    ell = np.asarray(ell_hat, dtype=np.float64).reshape(-1)
    m = np.asarray(m_hat, dtype=np.float64)
    r = np.asarray(r_hat, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if r.ndim == 1:
        r = r.reshape(-1, 1)
    if z.shape[1] < d.shape[1]:
        raise EstimationError("at least as many instruments as treatments are required")

    y_res = y - ell
    d_res = d - m
    z_res = z - r
    dc = d_res - d_res.mean(axis=0) if constant else d_res
    zc = z_res - z_res.mean(axis=0) if constant else z_res
    cross = zc.T @ dc / len(y)
    scale = math.sqrt(max(1.0, float(np.mean(d ** 2))) * max(1.0, float(np.mean(z ** 2))))
    smin = np.linalg.svd(cross, compute_uv=False).min() if cross.size else 0.0
    if smin < _DEGENERATE_REL_TOL * scale:
        raise DegenerateError(
            "residualized instruments barely covary with residualized treatments "
            "(weak or irrelevant instruments)"
        )
    beta, cov = iv_regression(y_res, d_res, z_res, vce=vce, cluster=cluster, constant=constant)
    names = _names(d.shape[1], target_names)
    return [
        Estimate(theta=float(beta[j]), se=float(math.sqrt(cov[j, j])),
                 model=ModelKind.IV, spec=spec, rep=1, n_used=len(y),
                 vce=vce, target=names[j])
        for j in range(d.shape[1])
    ]


def estimate_fiv(y, d, ell_hat, p_hat, m_hat, vce="hc1", cluster=None,
                 constant=True, spec="", target_names=None) -> Estimate:
    """Flexible partially linear IV estimator: IV regression of the
    residualized outcome on (D - E[D|X]-hat) using the constructed
    instrument (E[D|X,Z]-hat - E[D|X]-hat)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    ell = np.asarray(ell_hat, dtype=np.float64).reshape(-1)
    p = np.asarray(p_hat, dtype=np.float64).reshape(-1)
    m = np.asarray(m_hat, dtype=np.float64).reshape(-1)

    inst = p - m
    instc = inst - inst.mean() if constant else inst
    scale = max(1.0, float(np.mean(d ** 2)))
    if float(np.mean(instc ** 2)) < _DEGENERATE_REL_TOL * scale:
        raise DegenerateError(
            "constructed instrument E[D|X,Z]-E[D|X] has (near) zero variance; "
            "instruments carry no information about the treatment beyond the controls"
        )
    beta, cov = iv_regression(y - ell, d - m, inst, vce=vce, cluster=cluster, constant=constant)
    name = _names(1, target_names)[0]
    return Estimate(theta=float(beta[0]), se=float(math.sqrt(cov[0, 0])),
                    model=ModelKind.FIV, spec=spec, rep=1, n_used=len(y),
                    vce=vce, target=name)


def estimate_ate(y, d, g0_hat, g1_hat, m_hat, trim: TrimPolicy | float = 0.01,
                 vce="hc1", cluster=None, spec="", target_names=None) -> Estimate:
    """Average treatment effect from the doubly robust (AIPW) score."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    g0 = np.asarray(g0_hat, dtype=np.float64).reshape(-1)
    g1 = np.asarray(g1_hat, dtype=np.float64).reshape(-1)
    m = np.asarray(m_hat, dtype=np.float64).reshape(-1)
    if not np.all(np.isin(np.unique(d), (0.0, 1.0))):
        raise EstimationError("ATE requires a binary treatment")
    if d.min() == d.max():
        raise DegenerateError("every observation has the same treatment status (no overlap)")

    policy = trim if isinstance(trim, TrimPolicy) else TrimPolicy(trim)
    m_t, n_trimmed = policy.apply(m)
    psi = d * (y - g1) / m_t - (1.0 - d) * (y - g0) / (1.0 - m_t) + g1 - g0
    theta = float(psi.mean())
    se = _influence_se(psi, vce, cluster)
    name = _names(1, target_names)[0]
    return Estimate(theta=theta, se=se, model=ModelKind.INTERACTIVE, spec=spec, rep=1,
                    n_used=len(y), vce=vce, target=name,
                    extra={"effect": "ate", "n_trimmed": n_trimmed, "trim": policy.lower})


def estimate_atet(y, d, g0_hat, m_hat, trim: TrimPolicy | float = 0.01,
                  vce="hc1", cluster=None, spec="", target_names=None) -> Estimate:
    """Average treatment effect on the treated.

    Score per observation, with p-hat the sample treated share:

        psi_i = D_i (Y_i - g0_i) / p  -  m_i (1 - D_i)(Y_i - g0_i) / (p (1 - m_i))

    The treated share is treated as known for the standard error.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    g0 = np.asarray(g0_hat, dtype=np.float64).reshape(-1)
    m = np.asarray(m_hat, dtype=np.float64).reshape(-1)
    if not np.all(np.isin(np.unique(d), (0.0, 1.0))):
        raise EstimationError("ATET requires a binary treatment")
    p_share = float(d.mean())
    if p_share == 0.0:
        raise DegenerateError("no treated observations; the treated-effect is undefined")

    policy = trim if isinstance(trim, TrimPolicy) else TrimPolicy(trim)
    m_t, n_trimmed = policy.apply(m)
    psi = d * (y - g0) / p_share - m_t * (1.0 - d) * (y - g0) / (p_share * (1.0 - m_t))
    theta = float(psi.mean())
    se = _influence_se(psi, vce, cluster)
    name = _names(1, target_names)[0]
    return Estimate(theta=theta, se=se, model=ModelKind.INTERACTIVE, spec=spec, rep=1,
                    n_used=len(y), vce=vce, target=name,
                    extra={"effect": "atet", "n_trimmed": n_trimmed, "trim": policy.lower})


def estimate_late(y, d, z, ell0_hat, ell1_hat, p0_hat, p1_hat, r_hat,
                  trim: TrimPolicy | float = 0.01, vce="hc1", cluster=None,
                  spec="", target_names=None) -> Estimate:
    """Local average treatment effect for a binary instrument.

    theta is the ratio of the averaged outcome-equation score to the
    averaged first-stage score; the standard error treats
    (num_i - theta * den_i) / mean(den) as the influence function.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    ell0 = np.asarray(ell0_hat, dtype=np.float64).reshape(-1)
    ell1 = np.asarray(ell1_hat, dtype=np.float64).reshape(-1)
    p0 = np.asarray(p0_hat, dtype=np.float64).reshape(-1)
    p1 = np.asarray(p1_hat, dtype=np.float64).reshape(-1)
    r = np.asarray(r_hat, dtype=np.float64).reshape(-1)
    for name, arr in (("treatment", d), ("instrument", z)):
        if not np.all(np.isin(np.unique(arr), (0.0, 1.0))):
            raise EstimationError(f"LATE requires a binary {name}")

    policy = trim if isinstance(trim, TrimPolicy) else TrimPolicy(trim)
    r_t, n_trimmed = policy.apply(r)
    num = z * (y - ell1) / r_t - (1.0 - z) * (y - ell0) / (1.0 - r_t) + ell1 - ell0
    den = z * (d - p1) / r_t - (1.0 - z) * (d - p0) / (1.0 - r_t) + p1 - p0
    den_mean = float(den.mean())
    if den_mean <= _DEGENERATE_REL_TOL:
        raise DegenerateError(
            "first-stage score has non-positive mean (weak or invalid instrument)"
        )
    theta = float(num.mean()) / den_mean
    psi = (num - theta * den) / den_mean
    se = _influence_se(psi, vce, cluster)
    name = _names(1, target_names)[0]
    return Estimate(theta=theta, se=se, model=ModelKind.INTERACTIVE_IV, spec=spec, rep=1,
                    n_used=len(y), vce=vce, target=name,
                    extra={"effect": "late", "n_trimmed": n_trimmed, "trim": policy.lower})


def _harmonic_mean(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    return len(values) / float(np.sum(1.0 / values))


def aggregate_reps(estimates: list[Estimate], mode: str = "median") -> Estimate:
    """Combine per-repetition estimates across cross-fit repetitions.

    median: theta = median(theta_r);
            se = sqrt(median(se_r^2 + (theta_r - theta)^2))
    mean:   theta = mean(theta_r);
            se = sqrt(hmean(se_r^2 + (theta_r - theta)^2))
    """
    if not estimates:
        raise EstimationError("cannot aggregate zero repetitions")
    thetas = np.array([e.theta for e in estimates])
    ses = np.array([e.se for e in estimates])
    base = estimates[0]
    if mode == "median":
        theta = float(np.median(thetas))
        se = math.sqrt(float(np.median(ses ** 2 + (thetas - theta) ** 2)))
        tag = "md"
    elif mode == "mean":
        theta = float(np.mean(thetas))
        se = math.sqrt(_harmonic_mean(ses ** 2 + (thetas - theta) ** 2))
        tag = "mn"
    else:
        raise EstimationError(f"unknown aggregation mode {mode!r}")
    return Estimate(theta=theta, se=se, model=base.model, spec=base.spec, rep=tag,
                    n_used=base.n_used, vce=base.vce, target=base.target,
                    extra={"reps": len(estimates), **{k: v for k, v in base.extra.items()
                                                      if k in ("effect",)}})
