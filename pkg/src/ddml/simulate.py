"""Synthetic data generation and the Monte Carlo harness.

Five built-in designs share the partially linear structure

    Y_i = theta0 * D_i + c_Y * g(X_i) + sigma_Y(D_i, X_i) * eps_i
    D_i = c_D * g(X_i) + sigma_D(X_i) * u_i

with eps, u standard normal, X ~ N(0, Sigma) where Sigma_ij = 0.5^|i-j|,
theta0 = 0.5, and p = 50 controls except design 5 which uses p = 7. The
noise scales are self-normalizing on the generated sample:

    sigma_D(X_i)      = sqrt((1 + g_i)^2      / mean((1 + g)^2))
    sigma_Y(D_i, X_i) = sqrt((1 + theta0*D_i + g_i)^2
                             / mean((1 + theta0*D + g)^2))

The signal functions g:

    1: sum_j 0.9^j X_j                       (dense, geometrically decaying)
    2: X1 X2 + X3^2 + X4 X5 + X6 X7 + X8 X9 + X10 + X11^2 + X12 X13
    3: 1{X1 > 0.3} 1{X2 > 0} 1{X3 > -1}      (indicator interaction)
    4: X1 + sqrt|X2| + sin(X3) + 0.3 X4 X5 + X6 + 0.3 X7^2
    5: same as 4 but with p = 7 (no pure-noise covariates)

c_Y and c_D are calibrated once per design on a fixed 100k-draw sample so
that the signal variance of each equation equals its (unit) noise
variance, putting both R^2 near one half; the constants are cached and
shared by every sample size.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, ModelKind
from .errors import ConfigError, DataError, EstimationError
from .estimators import Estimate, linear_regression
from .learners import LearnerSpec
from .pipeline import PipelineSpec, run_pipeline
from .rng import derive_seed, make_rng

THETA0_DEFAULT = 0.5
CAL_SIZE = 100_000
CAL_SEED = 0x5EED_CA11B8A7E

_CAL_CACHE: dict = {}


def dgp_dim(dgp_id: int) -> int:
    if dgp_id not in (1, 2, 3, 4, 5):
        raise ConfigError(f"dgp id must be 1..5, got {dgp_id}")
    return 7 if dgp_id == 5 else 50


def signal_g(X: np.ndarray, dgp_id: int) -> np.ndarray:
    """The nuisance signal g for each design."""
    if dgp_id == 1:
        weights = 0.9 ** np.arange(1, X.shape[1] + 1)
        return X @ weights
    if dgp_id == 2:
        return (X[:, 0] * X[:, 1] + X[:, 2] ** 2 + X[:, 3] * X[:, 4]
                + X[:, 5] * X[:, 6] + X[:, 7] * X[:, 8] + X[:, 9]
                + X[:, 10] ** 2 + X[:, 11] * X[:, 12])
    if dgp_id == 3:
        return ((X[:, 0] > 0.3) & (X[:, 1] > 0.0) & (X[:, 2] > -1.0)).astype(np.float64)
    if dgp_id in (4, 5):
        return (X[:, 0] + np.sqrt(np.abs(X[:, 1])) + np.sin(X[:, 2])
                + 0.3 * X[:, 3] * X[:, 4] + X[:, 5] + 0.3 * X[:, 6] ** 2)
    raise ConfigError(f"dgp id must be 1..5, got {dgp_id}")


@dataclass(frozen=True)
class DgpSpec:
    dgp_id: int
    n: int
    theta0: float = THETA0_DEFAULT
    seed: int = 0

    def __post_init__(self):
        dgp_dim(self.dgp_id)
        if self.n < 1:
            raise ConfigError("sample size must be positive")

    @property
    def p(self) -> int:
        return dgp_dim(self.dgp_id)


@dataclass
class SimulatedData:
    """A generated Dataset plus the infeasible oracle columns."""

    dataset: Dataset
    g: np.ndarray          # true signal g(X_i)
    ell0: np.ndarray       # true E[Y|X]
    m0: np.ndarray         # true E[D|X]
    c_y: float
    c_d: float
    theta0: float


def _toeplitz_chol(p: int) -> np.ndarray:
    idx = np.arange(p)
    sigma = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    return np.linalg.cholesky(sigma)


def _draw_x(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, p)) @ _toeplitz_chol(p).T


def calibrate_constants(dgp_id: int, theta0: float = THETA0_DEFAULT) -> tuple[float, float]:
    """Signal-scale constants making each equation's signal variance equal
    its unit noise variance (R^2 = 0.5) on a fixed calibration sample."""
    key = (dgp_id, theta0)
    if key in _CAL_CACHE:
        return _CAL_CACHE[key]
    rng = make_rng(derive_seed(CAL_SEED, "calibrate", dgp_id))
    p = dgp_dim(dgp_id)
    X = _draw_x(CAL_SIZE, p, rng)
    g = signal_g(X, dgp_id)
    var_g = float(np.var(g))
    c_d = 1.0 / math.sqrt(var_g)

    u = rng.standard_normal(CAL_SIZE)
    base = (1.0 + g) ** 2
    sigma_d = np.sqrt(base / base.mean())
    d = c_d * g + sigma_d * u

    # Var(theta0 * d + c_y * g) = 1  =>  quadratic in c_y; positive root.
    a = var_g
    b = 2.0 * theta0 * float(np.cov(d, g, ddof=0)[0, 1])
    c = theta0 ** 2 * float(np.var(d)) - 1.0
    disc = b * b - 4.0 * a * c
    c_y = (-b + math.sqrt(disc)) / (2.0 * a)
    _CAL_CACHE[key] = (c_y, c_d)
    return c_y, c_d


def gen_dgp(spec: DgpSpec, sigma_y_scale: float = 1.0,
            sigma_d_scale: float = 1.0) -> SimulatedData:
    """Generate one sample. The sigma scales exist so tests can switch the
    structural errors off; both default to the designed value 1."""
    c_y, c_d = calibrate_constants(spec.dgp_id, spec.theta0)
    rng = make_rng(derive_seed(spec.seed, "dgp", spec.dgp_id, spec.n))
    X = _draw_x(spec.n, spec.p, rng)
    g = signal_g(X, spec.dgp_id)
    u = rng.standard_normal(spec.n)
    eps = rng.standard_normal(spec.n)

    base_d = (1.0 + g) ** 2
    sigma_d = np.sqrt(base_d / base_d.mean())
    d = c_d * g + sigma_d_scale * sigma_d * u

    base_y = (1.0 + spec.theta0 * d + g) ** 2
    sigma_y = np.sqrt(base_y / base_y.mean())
    y = spec.theta0 * d + c_y * g + sigma_y_scale * sigma_y * eps

    dataset = Dataset(y=y, d=d.reshape(-1, 1), x=X, z=np.empty((spec.n, 0)))
    return SimulatedData(dataset=dataset, g=g,
                         ell0=(spec.theta0 * c_d + c_y) * g, m0=c_d * g,
                         c_y=c_y, c_d=c_d, theta0=spec.theta0)


def oracle_estimate(sim: SimulatedData, vce: str = "hc1") -> Estimate:
    """Infeasible benchmark: full-sample OLS of Y on (D, g(X))."""
    X = np.column_stack([sim.dataset.d[:, 0], sim.g])
    beta, cov = linear_regression(X, sim.dataset.y, vce=vce, constant=True)
    return Estimate(theta=float(beta[0]), se=float(math.sqrt(cov[0, 0])),
                    model=ModelKind.PARTIAL, spec="oracle", rep=1,
                    n_used=sim.dataset.n, vce=vce)


def ols_base_estimate(sim: SimulatedData, vce: str = "hc1") -> Estimate:
    """Feasible comparison: full-sample OLS of Y on D and the raw controls."""
    X = np.column_stack([sim.dataset.d[:, 0], sim.dataset.x])
    beta, cov = linear_regression(X, sim.dataset.y, vce=vce, constant=True)
    return Estimate(theta=float(beta[0]), se=float(math.sqrt(cov[0, 0])),
                    model=ModelKind.PARTIAL, spec="ols", rep=1,
                    n_used=sim.dataset.n, vce=vce)


def default_mc_folds(n: int) -> int:
    """More folds for small samples: 20 when n <= 100, else 5."""
    return 20 if n <= 100 else 5


@dataclass
class McEstimatorReport:
    label: str
    mab: float
    coverage: float
    reps_used: int
    failures: int
    thetas: list = field(default_factory=list)
    ses: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "mab": self.mab,
            "coverage": self.coverage,
            "reps_used": self.reps_used,
            "failures": self.failures,
            "thetas": self.thetas,
            "ses": self.ses,
        }


@dataclass
class McReport:
    dgp_id: int
    n: int
    theta0: float
    reps: int
    seed: int
    estimators: list

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp_id,
            "n": self.n,
            "theta0": self.theta0,
            "reps": self.reps,
            "seed": self.seed,
            "estimators": [e.to_dict() for e in self.estimators],
        }


def _build_pipeline_spec(cfg: dict, n: int, seed: int) -> PipelineSpec:
    learners = cfg.get("learners", {})

    def specs(role):
        return [ls if isinstance(ls, LearnerSpec) else LearnerSpec.from_config(ls)
                for ls in learners.get(role, [])]

    return PipelineSpec(
        model=ModelKind(cfg.get("model", "partial")),
        y_learners=specs("y"),
        d_learners=specs("d"),
        z_learners=specs("z"),
        k=cfg.get("k") or default_mc_folds(n),
        reps=cfg.get("reps", 1),
        seed=seed,
        shortstack=cfg.get("shortstack", True),
        stacking=cfg.get("stacking", "none"),
        stack_v=cfg.get("stack_v", 5),
        effect=cfg.get("effect", "ate"),
        trim=cfg.get("trim", 0.01),
        vce=cfg.get("vce", "hc1"),
        aggregate=cfg.get("aggregate", "median"),
    )


def _run_ddml_once(sim: SimulatedData, cfg: dict, seed: int) -> Estimate:
    # replications parallelize one level up, so each pipeline runs serially
    spec = _build_pipeline_spec(cfg, sim.dataset.n, seed)
    res = run_pipeline(sim.dataset, spec, threads=1)
    select = cfg.get("select", "ss" if spec.shortstack else "mse")
    reps = spec.reps
    if select == "ss":
        rows = [e for e in res.estimates if e.spec == "[shortstack]"]
    elif select == "stack":
        rows = [e for e in res.estimates if e.spec == "[stack]"]
    elif select == "mse":
        rows = [e for e in res.estimates if e.spec == res.opt_labels[e.rep]]
    else:
        raise ConfigError(f"unknown spec selector {select!r}")
    if not rows:
        raise EstimationError(f"no estimate rows for selector {select!r}")
    if reps == 1:
        return rows[0]
    agg = [a for a in res.aggregates
           if a.rep == ("md" if spec.aggregate == "median" else "mn")
           and a.spec == {"ss": "[shortstack]", "stack": "[stack]", "mse": "[min-mse]"}[select]]
    return agg[0]


def run_mc(dgp: DgpSpec, estimator_configs: list[dict], reps: int, seed: int = 0,
           threads: int = 1) -> McReport:
    """Monte Carlo study: fresh sample per replication, every estimator
    config applied to it, median absolute bias and 95% CI coverage per
    config. Failed replications are recorded and excluded per config."""
    if reps < 1:
        raise ConfigError("replication count must be positive")
    labels = [cfg.get("label") or cfg.get("type", f"est{i}")
              for i, cfg in enumerate(estimator_configs)]

    def run_rep(r: int):
        rep_seed = derive_seed(seed, "mcrep", r)
        sim = gen_dgp(DgpSpec(dgp.dgp_id, dgp.n, dgp.theta0, seed=rep_seed))
        out = []
        for cfg in estimator_configs:
            kind = cfg.get("type", "ddml")
            try:
                if kind == "oracle":
                    est = oracle_estimate(sim, vce=cfg.get("vce", "hc1"))
                elif kind == "ols":
                    est = ols_base_estimate(sim, vce=cfg.get("vce", "hc1"))
                elif kind == "ddml":
                    est = _run_ddml_once(sim, cfg, derive_seed(rep_seed, "pipe"))
                else:
                    raise ConfigError(f"unknown estimator type {kind!r}")
                out.append((est.theta, est.se))
            except (EstimationError, DataError):
                out.append(None)
        return out

    if threads > 1 and reps > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_rep = list(pool.map(run_rep, range(reps)))
    else:
        per_rep = [run_rep(r) for r in range(reps)]

    from .estimators import Z975

    reports = []
    for j, label in enumerate(labels):
        rows = [per_rep[r][j] for r in range(reps)]
        ok = [row for row in rows if row is not None]
        failures = reps - len(ok)
        if not ok:
            reports.append(McEstimatorReport(label=label, mab=math.nan, coverage=math.nan,
                                             reps_used=0, failures=failures))
            continue
        thetas = np.array([t for t, _ in ok])
        ses = np.array([s for _, s in ok])
        mab = float(np.median(np.abs(thetas - dgp.theta0)))
        covered = np.abs(thetas - dgp.theta0) <= Z975 * ses
        reports.append(McEstimatorReport(
            label=label, mab=mab, coverage=float(covered.mean()),
            reps_used=len(ok), failures=failures,
            thetas=[float(t) for t in thetas], ses=[float(s) for s in ses],
        ))
    return McReport(dgp_id=dgp.dgp_id, n=dgp.n, theta0=dgp.theta0, reps=reps,
                    seed=seed, estimators=reports)
