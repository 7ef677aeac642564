"""Acceptance suite: one test per release criterion.

The statistical criteria (7 and 8) run scaled-down Monte Carlo studies at
n = 1000 with 200 replications each and dominate the suite's runtime
(tens of minutes on two cores). Everything else finishes in seconds.
"""

import json
import math
import time

import numpy as np

from ddml import (
    CefKind,
    Dataset,
    DgpSpec,
    LearnerSpec,
    ModelKind,
    OlsLearner,
    PipelineSpec,
    assign_folds,
    cls_weights,
    crossfit_cef,
    crossfit_fiv_pair,
    crossfit_model,
    estimate_ate,
    estimate_atet,
    estimate_fiv,
    estimate_late,
    estimate_partial,
    estimate_pliv,
    gen_dgp,
    oracle_estimate,
    run_pipeline,
    shortstack_all,
)
from ddml.cli import main as cli_main
from ddml.estimators import Z975, Estimate, aggregate_reps
from ddml.learners import LassoCvLearner
from ddml.rng import derive_seed, make_rng
from ddml.simulate import ols_base_estimate

THREADS = 2


# ---------------------------------------------------------------------------
# criterion 1: oracle exactness, all five estimators, |theta - 0.5| <= 1e-8
# ---------------------------------------------------------------------------

def test_c01_oracle_exactness():
    start = time.perf_counter()
    rng = make_rng(101)
    n = 80
    theta0 = 0.5

    # partially linear: noiseless outcome, true CEFs supplied
    x = rng.standard_normal(n)
    g = np.sin(x) + 0.5 * x ** 2
    d = 0.8 * g + rng.standard_normal(n)
    y = theta0 * d + g
    est = estimate_partial(y, d, theta0 * 0.8 * g + g, 0.8 * g)[0]
    assert abs(est.theta - theta0) <= 1e-8

    # interactive ATE: constant effect, exact arms, true propensity
    x = rng.standard_normal(n)
    ps = np.clip(1.0 / (1.0 + np.exp(-x)), 0.05, 0.95)
    dbin = (rng.uniform(size=n) < ps).astype(float)
    g0 = x ** 2
    g1 = g0 + theta0
    ybin = np.where(dbin == 1, g1, g0)
    est = estimate_ate(ybin, dbin, g0, g1, ps)
    assert abs(est.theta - theta0) <= 1e-8

    # interactive ATET: same design, untreated outcomes exactly g0
    est = estimate_atet(ybin, dbin, g0, ps)
    assert abs(est.theta - theta0) <= 1e-8

    # partially linear IV: exact structural equation
    z = rng.standard_normal(n)
    d_iv = z + 0.5 * x + 0.3 * rng.standard_normal(n)
    m0 = 0.5 * x
    r0 = np.zeros(n)
    y_iv = theta0 * d_iv + g
    est = estimate_pliv(y_iv, d_iv, z, theta0 * m0 + g, m0, r0)[0]
    assert abs(est.theta - theta0) <= 1e-8

    # flexible IV: learned instrument p - m
    p0 = z + 0.5 * x
    est = estimate_fiv(y_iv, d_iv, theta0 * m0 + g, p0, m0)
    assert abs(est.theta - theta0) <= 1e-8

    # interactive IV: constant effect, exact split CEFs
    zb = (rng.uniform(size=n) < 0.5).astype(float)
    p_z1 = np.clip(0.6 + 0.2 * np.tanh(x), 0.05, 0.95)
    p_z0 = np.clip(0.3 + 0.1 * np.tanh(x), 0.05, 0.95)
    dbin2 = np.where(zb == 1, (rng.uniform(size=n) < p_z1), (rng.uniform(size=n) < p_z0)).astype(float)
    h = np.cos(x)
    y_late = theta0 * dbin2 + h
    ell1 = theta0 * p_z1 + h
    ell0 = theta0 * p_z0 + h
    est = estimate_late(y_late, dbin2, zb, ell0, ell1, p_z0, p_z1, np.full(n, 0.5))
    assert abs(est.theta - theta0) <= 1e-8

    assert time.perf_counter() - start < 1.0


# ---------------------------------------------------------------------------
# criterion 2: formula-oracle equivalence on randomized small instances
# ---------------------------------------------------------------------------

def _ols_oracle(X, y, vce):
    n = len(y)
    Xc = np.column_stack([X, np.ones(n)])
    k = Xc.shape[1]
    XtX_inv = np.linalg.inv(Xc.T @ Xc)
    beta = XtX_inv @ Xc.T @ y
    e = y - Xc @ beta
    if vce == "classical":
        cov = float(e @ e) / (n - k) * XtX_inv
    else:
        w = e ** 2 * (n / (n - k)) if vce == "hc1" else e ** 2
        cov = XtX_inv @ ((Xc * w[:, None]).T @ Xc) @ XtX_inv
    return beta, cov


def _tsls_oracle(y, X, Z, vce):
    n = len(y)
    Xc = np.column_stack([X, np.ones(n)])
    Zc = np.column_stack([Z, np.ones(n)])
    PZ = Zc @ np.linalg.inv(Zc.T @ Zc) @ Zc.T
    Xhat = PZ @ Xc
    A_inv = np.linalg.inv(Xhat.T @ Xc)
    beta = A_inv @ Xhat.T @ y
    e = y - Xc @ beta
    k = Xc.shape[1]
    if vce == "classical":
        cov = float(e @ e) / (n - k) * A_inv
    else:
        w = e ** 2 * (n / (n - k)) if vce == "hc1" else e ** 2
        cov = A_inv @ ((Xhat * w[:, None]).T @ Xhat) @ A_inv.T
    return beta, cov


def test_c02_formula_oracle_equivalence():
    start = time.perf_counter()
    rng = make_rng(202)
    for trial in range(20):
        n = int(rng.integers(10, 21))

        # partially linear, theta and sandwich SEs
        d = rng.standard_normal(n)
        y = rng.standard_normal(n)
        ell = rng.standard_normal(n)
        m = rng.standard_normal(n) * 0.5
        for vce in ("classical", "hc0", "hc1"):
            est = estimate_partial(y, d, ell, m, vce=vce)[0]
            beta, cov = _ols_oracle((d - m).reshape(-1, 1), y - ell, vce)
            assert abs(est.theta - beta[0]) <= 1e-10
            assert abs(est.se - math.sqrt(cov[0, 0])) <= 1e-8

        # ATE / ATET scores
        dbin = (rng.uniform(size=n) < 0.5).astype(float)
        dbin[:2] = [0.0, 1.0]
        g0 = rng.standard_normal(n)
        g1 = rng.standard_normal(n)
        mp = rng.uniform(0.15, 0.85, size=n)
        psi = dbin * (y - g1) / mp - (1 - dbin) * (y - g0) / (1 - mp) + g1 - g0
        est = estimate_ate(y, dbin, g0, g1, mp)
        assert abs(est.theta - psi.mean()) <= 1e-10
        p_share = dbin.mean()
        psi_t = (dbin * (y - g0) / p_share
                 - mp * (1 - dbin) * (y - g0) / (p_share * (1 - mp)))
        est = estimate_atet(y, dbin, g0, mp)
        assert abs(est.theta - psi_t.mean()) <= 1e-10

        # partially linear IV with two instruments, theta and SE
        z2 = rng.standard_normal((n, 2))
        d_iv = z2 @ np.array([1.0, 0.6]) + rng.standard_normal(n)
        y_iv = 0.7 * d_iv + rng.standard_normal(n)
        r2 = rng.standard_normal((n, 2)) * 0.2
        for vce in ("classical", "hc1"):
            est = estimate_pliv(y_iv, d_iv, z2, ell, m, r2, vce=vce)[0]
            beta, cov = _tsls_oracle(y_iv - ell, (d_iv - m).reshape(-1, 1), z2 - r2, vce)
            assert abs(est.theta - beta[0]) <= 1e-10
            assert abs(est.se - math.sqrt(cov[0, 0])) <= 1e-8

        # flexible IV ratio vs its 2SLS representation
        p_hat = d_iv + 0.4 * rng.standard_normal(n)
        m_hat = rng.standard_normal(n) * 0.3
        est = estimate_fiv(y_iv, d_iv, ell, p_hat, m_hat)
        beta, _ = _tsls_oracle(y_iv - ell, (d_iv - m_hat).reshape(-1, 1),
                               (p_hat - m_hat).reshape(-1, 1), "hc1")
        assert abs(est.theta - beta[0]) <= 1e-10

        # local effect ratio
        zb = np.zeros(n)
        zb[: n // 2] = 1.0
        dbin2 = (rng.uniform(size=n) < np.where(zb == 1, 0.8, 0.2)).astype(float)
        ell0 = rng.standard_normal(n)
        ell1 = rng.standard_normal(n)
        p0 = rng.uniform(0.1, 0.35, size=n)
        p1 = rng.uniform(0.65, 0.9, size=n)
        r = rng.uniform(0.35, 0.65, size=n)
        num = zb * (y - ell1) / r - (1 - zb) * (y - ell0) / (1 - r) + ell1 - ell0
        den = zb * (dbin2 - p1) / r - (1 - zb) * (dbin2 - p0) / (1 - r) + p1 - p0
        est = estimate_late(y, dbin2, zb, ell0, ell1, p0, p1, r)
        assert abs(est.theta - num.mean() / den.mean()) <= 1e-10

    assert time.perf_counter() - start < 5.0


# ---------------------------------------------------------------------------
# criterion 3: constrained least squares vs simplex grid search
# ---------------------------------------------------------------------------

def _grid_weights(step=0.01):
    ticks = int(round(1.0 / step))
    out = []
    for a in range(ticks + 1):
        for b in range(ticks + 1 - a):
            out.append((a / ticks, b / ticks, (ticks - a - b) / ticks))
    return np.array(out)


def test_c03_cls_grid_search():
    start = time.perf_counter()
    rng = make_rng(303)
    W = _grid_weights(0.01)  # 5151 grid points on the 3-simplex
    for trial in range(100):
        P = rng.standard_normal((8, 3))
        y = rng.standard_normal(8)
        sw = cls_weights(P, y)
        # simplex invariants at stated tolerances
        assert sw.weights.min() >= -1e-12
        assert abs(sw.weights.sum() - 1.0) <= 1e-10
        # never worse than the dense grid (one-sided: the grid cannot beat
        # the exact solver by more than tolerance)
        objs = np.sum((y[None, :] - W @ P.T) ** 2, axis=1)
        grid_best = float(objs.min())
        assert sw.objective <= grid_best + 1e-4
        # two-sided agreement with a locally refined grid optimum
        center = W[int(objs.argmin())]
        best = grid_best
        step = 0.01
        for _ in range(3):
            step /= 10.0
            for da in range(-12, 13):
                for db in range(-12, 13):
                    w = center + np.array([da * step, db * step, -(da + db) * step])
                    if w.min() < 0:
                        continue
                    obj = float(np.sum((y - P @ w) ** 2))
                    if obj < best:
                        best = obj
                        cand = w
            center = cand if best < grid_best else center
        assert abs(sw.objective - best) <= 1e-4
    assert time.perf_counter() - start < 10.0


# ---------------------------------------------------------------------------
# criterion 4: lasso KKT suite
# ---------------------------------------------------------------------------

def _orthonormal_design(n, p, rng):
    raw = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
    q, _ = np.linalg.qr(raw)
    return q[:, 1:] * np.sqrt(n)


def test_c04_lasso_kkt_suite():
    start = time.perf_counter()
    rng = make_rng(404)

    for trial in range(60):  # general designs, CV-selected penalty
        n = int(rng.integers(25, 45))
        p = int(rng.integers(3, 9))
        X = rng.standard_normal((n, p))
        beta = np.zeros(p)
        beta[: max(1, p // 3)] = rng.standard_normal(max(1, p // 3)) * 2
        y = X @ beta + 0.5 * rng.standard_normal(n)
        model = LassoCvLearner().fit(X, y, seed=trial)
        scaler = model.info["scaler"]
        Xs = scaler.apply(X)
        yc = y - y.mean()
        b = model.info["coef_std"]
        lam = model.info["lambda"]
        grad = Xs.T @ (yc - Xs @ b) / n
        active = b != 0.0
        if active.any():
            assert np.max(np.abs(grad[active] - lam * np.sign(b[active]))) <= 1e-6
        if (~active).any():
            assert np.max(np.abs(grad[~active])) <= lam + 1e-6

    for trial in range(40):  # orthonormal designs vs the analytic solution
        n = int(rng.integers(16, 64))
        p = int(rng.integers(2, 7))
        X = _orthonormal_design(n, p, rng)
        y = rng.standard_normal(n)
        lam = float(rng.uniform(0.01, 0.5))
        model = LassoCvLearner(lambda_grid=[lam]).fit(X, y, seed=trial)
        z = X.T @ (y - y.mean()) / n
        analytic = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
        assert np.max(np.abs(model.info["coef_std"] - analytic)) <= 1e-8

    assert time.perf_counter() - start < 30.0


# ---------------------------------------------------------------------------
# criterion 5: cross-fit leakage and partition
# ---------------------------------------------------------------------------

class _RecordingLearner:
    def __init__(self):
        self.inner = OlsLearner()
        self.label = "rec"
        self.train_rows = []

    def fit(self, X, y, seed=0):
        self.train_rows.append(X[:, 0].astype(int).copy())
        return self.inner.fit(X, y, seed)


class _RowTrackingModel:
    def __init__(self, rows_seen):
        self.rows_seen = rows_seen

    def predict(self, Xq):
        self.rows_seen.extend(Xq[:, 0].astype(int).tolist())
        return np.zeros(len(Xq))


def test_c05_crossfit_leakage():
    start = time.perf_counter()
    rng = make_rng(505)
    n, k = 60, 5
    ids = np.arange(n, dtype=float).reshape(-1, 1)  # row ids ride along as x1
    x = np.column_stack([ids, rng.standard_normal((n, 2))])
    d = x[:, 1] + rng.standard_normal(n)
    y = 0.5 * d + x[:, 2] + rng.standard_normal(n)
    data = Dataset(y=y, d=d, x=x, z=np.empty((n, 0)))
    folds = assign_folds(n, k, 2, seed=3)

    for rep in range(2):
        rec = _RecordingLearner()
        fit = crossfit_cef(data, CefKind.Y_X, 0, rec, folds, rep, master_seed=7)
        assert len(rec.train_rows) == k
        for fold, rows in enumerate(rec.train_rows, start=1):
            own_fold_rows = set(np.where(folds.in_fold(rep, fold))[0])
            # the model fit for fold `fold` never saw that fold's rows
            assert own_fold_rows.isdisjoint(set(rows))
            assert set(rows) == set(range(n)) - own_fold_rows

    # every observation predicted exactly once per (equation, learner, rep)
    rows_seen = []

    class TrackingLearner:
        label = "track"

        def fit(self, X, y, seed=0):
            return _RowTrackingModel(rows_seen)

    for rep in range(2):
        rows_seen.clear()
        crossfit_cef(data, CefKind.Y_X, 0, TrackingLearner(), folds, rep, master_seed=7)
        assert sorted(rows_seen) == list(range(n))

    # replacing a fold's targets with noise cannot change that fold's predictions
    fit = crossfit_cef(data, CefKind.Y_X, 0, OlsLearner(), folds, 0, master_seed=9)
    for fold in range(1, k + 1):
        test = folds.in_fold(0, fold)
        y_mod = data.y.copy()
        y_mod[test] = rng.standard_normal(int(test.sum())) * 1e3
        data_mod = Dataset(y=y_mod, d=data.d, x=data.x, z=data.z)
        fit_mod = crossfit_cef(data_mod, CefKind.Y_X, 0, OlsLearner(), folds, 0,
                               master_seed=9)
        assert np.array_equal(fit.oos[test], fit_mod.oos[test])

    assert time.perf_counter() - start < 5.0


# ---------------------------------------------------------------------------
# criterion 6: repetition aggregation identities
# ---------------------------------------------------------------------------

def test_c06_aggregation_identities():
    start = time.perf_counter()

    def est(theta, se, rep):
        return Estimate(theta=theta, se=se, model=ModelKind.PARTIAL, spec="s",
                        rep=rep, n_used=10, vce="hc1")

    single = [est(0.321, 0.077, 1)]
    for mode in ("median", "mean"):
        agg = aggregate_reps(single, mode)
        assert agg.theta == 0.321 and agg.se == 0.077

    agg = aggregate_reps([est(1.0, 1.0, 1), est(3.0, 1.0, 2)], "mean")
    assert agg.theta == 2.0
    assert agg.se == math.sqrt(2.0)

    agg = aggregate_reps([est(1.0, 1.0, 1), est(2.0, 1.0, 2), est(9.0, 1.0, 3)], "median")
    assert agg.theta == 2.0
    assert agg.se == math.sqrt(2.0)

    assert time.perf_counter() - start < 1.0


# ---------------------------------------------------------------------------
# criteria 7 and 8: scaled-down statistical reproductions
# ---------------------------------------------------------------------------

MENU_FULL = [
    LearnerSpec("ols"),
    LearnerSpec("lassocv"),
    LearnerSpec("ridgecv"),
    LearnerSpec("rf", {"max_depth": 6, "n_trees": 200}, label="rf_medium"),
    LearnerSpec("gradboost", {"learning_rate": 0.1}, label="gb_medium"),
]


def _mc_shortstack_study(dgp_id, n_obs, reps, master_seed, menu, allcombos):
    """Fresh sample per replication; returns per-rep estimates for the
    oracle, base-controls OLS, the short-stack spec, and (optionally) each
    base learner's diagonal combination."""
    rows = {"oracle": [], "ols": [], "ss": []}
    diag = {ls.report_label: [] for ls in menu} if allcombos else {}

    def one_rep(r):
        rep_seed = derive_seed(master_seed, "mcrep", r)
        sim = gen_dgp(DgpSpec(dgp_id, n_obs, seed=rep_seed))
        out = {}
        out["oracle"] = oracle_estimate(sim)
        out["ols"] = ols_base_estimate(sim)
        spec = PipelineSpec(model="partial", y_learners=menu, d_learners=menu,
                            k=5, seed=derive_seed(rep_seed, "pipe"),
                            shortstack=True, allcombos=allcombos)
        res = run_pipeline(sim.dataset, spec, threads=1)
        out["ss"] = [e for e in res.estimates if e.spec == "[shortstack]"][0]
        if allcombos:
            for ls in menu:
                label = f"y:{ls.report_label} d:{ls.report_label}"
                out[ls.report_label] = [e for e in res.estimates if e.spec == label][0]
        return out

    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=THREADS) as pool:
        results = list(pool.map(one_rep, range(reps)))
    for out in results:
        for key in rows:
            rows[key].append(out[key])
        for key in diag:
            diag[key].append(out[key])
    return rows, diag


def _mab(estimates, theta0=0.5):
    return float(np.median([abs(e.theta - theta0) for e in estimates]))


def _coverage(estimates, theta0=0.5):
    hits = [abs(e.theta - theta0) <= Z975 * e.se for e in estimates]
    return float(np.mean(hits))


def test_c07_statistical_reproduction_linear_design():
    start = time.perf_counter()
    reps = 200
    rows, diag = _mc_shortstack_study(1, 1000, reps, master_seed=20250807,
                                      menu=MENU_FULL, allcombos=True)
    oracle_cov = _coverage(rows["oracle"])
    ss_cov = _coverage(rows["ss"])
    oracle_mab = _mab(rows["oracle"])
    ss_mab = _mab(rows["ss"])
    base_mabs = {label: _mab(ests) for label, ests in diag.items()}
    print(f"\n[c07] oracle: MAB={oracle_mab:.4f} cover={oracle_cov:.3f}")
    print(f"[c07] shortstack: MAB={ss_mab:.4f} cover={ss_cov:.3f}")
    for label, mab in base_mabs.items():
        print(f"[c07] base {label}: MAB={mab:.4f}")
    assert 0.90 <= oracle_cov <= 0.99, f"oracle coverage {oracle_cov}"
    assert 0.85 <= ss_cov <= 0.99, f"short-stack coverage {ss_cov}"
    assert ss_mab <= 1.5 * oracle_mab, f"ss MAB {ss_mab} vs oracle {oracle_mab}"
    assert ss_mab <= max(base_mabs.values()) + 1e-12
    assert time.perf_counter() - start < 1800.0


MENU_NONLINEAR = [
    LearnerSpec("ols"),
    LearnerSpec("rf", {"max_depth": 6, "n_trees": 150}, label="rf_medium"),
    LearnerSpec("gradboost", {"learning_rate": 0.1}, label="gb_medium"),
]


def test_c08_statistical_reproduction_nonlinear_design():
    start = time.perf_counter()
    reps = 200
    wins = 0
    seeds = [11, 22, 33, 44, 55]
    for seed in seeds:
        rows, _ = _mc_shortstack_study(3, 1000, reps, master_seed=seed,
                                       menu=MENU_NONLINEAR, allcombos=False)
        ss_mab = _mab(rows["ss"])
        ols_mab = _mab(rows["ols"])
        print(f"\n[c08] seed {seed}: shortstack MAB={ss_mab:.4f} "
              f"base-controls OLS MAB={ols_mab:.4f}")
        if ss_mab < ols_mab:
            wins += 1
    assert wins >= math.ceil(0.95 * len(seeds)), f"strict ordering in {wins}/5 seeds"
    assert time.perf_counter() - start < 1800.0


# ---------------------------------------------------------------------------
# criterion 9: byte-identical output across runs and thread counts
# ---------------------------------------------------------------------------

def test_c09_determinism(tmp_path):
    start = time.perf_counter()
    from ddml import write_csv

    sim = gen_dgp(DgpSpec(5, 80, seed=12))
    write_csv(sim.dataset, str(tmp_path / "data.csv"))
    cfg = {
        "model": "partial",
        "data": {"path": str(tmp_path / "data.csv"),
                 "roles": {"y": "y", "d": ["d1"],
                           "x": [f"x{i}" for i in range(1, 8)]}},
        "folds": {"k": 4, "seed": 5},
        "learners": {"y": [{"kind": "ols"}, {"kind": "rf", "params": {"n_trees": 30, "max_depth": 3}}],
                     "d": [{"kind": "ols"}, {"kind": "rf", "params": {"n_trees": 30, "max_depth": 3}}]},
        "stacking": {"shortstack": True},
        "output": {"json": str(tmp_path / "res.json")},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))

    outs = []
    for name in ("r1.json", "r2.json"):
        assert cli_main(["estimate", "--config", str(cfg_path), "--threads", "1",
                         "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1], "serial runs differ"
    assert cli_main(["estimate", "--config", str(cfg_path), "--threads", "4",
                     "--out", str(tmp_path / "r4.json")]) == 0
    assert (tmp_path / "r4.json").read_bytes() == outs[0], "threaded run differs"

    sim_cfg = {
        "dgp": {"id": 5, "n": 80}, "reps": 3, "seed": 6,
        "estimators": [{"label": "oracle", "type": "oracle"},
                       {"label": "ols", "type": "ols"}],
    }
    sim_path = tmp_path / "sim.json"
    sim_path.write_text(json.dumps(sim_cfg))
    sim_outs = []
    for name in ("m1.json", "m2.json"):
        assert cli_main(["simulate", "--config", str(sim_path), "--threads", "1",
                         "--out", str(tmp_path / name)]) == 0
        sim_outs.append((tmp_path / name).read_bytes())
    assert sim_outs[0] == sim_outs[1]
    assert cli_main(["simulate", "--config", str(sim_path), "--threads", "3",
                     "--out", str(tmp_path / "m3.json")]) == 0
    assert (tmp_path / "m3.json").read_bytes() == sim_outs[0]

    assert time.perf_counter() - start < 60.0


# ---------------------------------------------------------------------------
# criterion 10: flexible-IV wiring under instrumented learners
# ---------------------------------------------------------------------------

class _TargetRecorder:
    def __init__(self):
        self.inner = OlsLearner()
        self.label = "rec"
        self.targets = []

    def fit(self, X, y, seed=0):
        self.targets.append(np.array(y, copy=True))
        return self.inner.fit(X, y, seed)


def test_c10_fiv_wiring():
    start = time.perf_counter()
    rng = make_rng(1010)
    n, k = 60, 4
    x = rng.standard_normal((n, 2))
    z = rng.standard_normal(n)
    d = 0.7 * z + x[:, 0] + 0.4 * rng.standard_normal(n)
    y = 0.5 * d + x[:, 1] + 0.2 * rng.standard_normal(n)
    data = Dataset(y=y, d=d, x=x, z=z)
    folds = assign_folds(n, k, 1, seed=13)

    # step (c) of the sequential first stage trains on the in-sample fitted
    # values from step (b), never on raw D
    rec = _TargetRecorder()
    p_fit, m_fit = crossfit_fiv_pair(data, rec, folds, 0, master_seed=21)
    assert len(rec.targets) == 2 * k
    proj_targets = rec.targets[k:]
    for fold, target in enumerate(proj_targets, start=1):
        train = ~folds.in_fold(0, fold)
        assert np.array_equal(target, p_fit.insample[train, fold - 1])
        assert not np.array_equal(target, d[train])

    # staged short-stacking: fold-wise solves regress D on the in-sample
    # columns over each training complement; the projection combination
    # targets the fold-wise stacked first stage, not raw D
    class _Mean:
        label = "mean"

        def fit(self, X, y, seed=0):
            mu = float(np.mean(y))

            class _M:
                def predict(self, Xq):
                    return np.full(len(Xq), mu)

            return _M()

    learners = [OlsLearner(), _Mean()]
    result = crossfit_model(data, ModelKind.FIV,
                            {(CefKind.Y_X, 0): learners, (CefKind.D_XZ, 0): learners},
                            folds, master_seed=22)
    ss = shortstack_all(data, result, 0)
    p_ss = [s for s in ss if s.kind is CefKind.D_XZ][0]
    m_ss = [s for s in ss if s.kind is CefKind.D_X][0]

    p_fits = result.learners_for(CefKind.D_XZ, 0, 0)
    m_fits = result.learners_for(CefKind.D_X, 0, 0)
    P_oos = np.column_stack([f.oos for f in p_fits])
    p_star_fold = np.empty(n)
    for fold in range(1, k + 1):
        test = folds.in_fold(0, fold)
        train = ~test
        P_in = np.column_stack([f.insample[train, fold - 1] for f in p_fits])
        w = cls_weights(P_in, d[train]).weights  # target: raw D on the complement
        p_star_fold[test] = P_oos[test] @ w
    assert np.allclose(p_ss.extra["foldwise_preds"], p_star_fold, atol=1e-10)

    P_m = np.column_stack([f.oos for f in m_fits])
    w_m = cls_weights(P_m, p_star_fold).weights  # target: fold-wise stacked p
    assert np.allclose(m_ss.preds, P_m @ w_m, atol=1e-10)
    w_wrong = cls_weights(P_m, d).weights
    assert not np.allclose(w_m, w_wrong, atol=1e-8)

    assert time.perf_counter() - start < 5.0
