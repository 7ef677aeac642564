import numpy as np
import pytest

from ddml import (
    CefKind,
    Dataset,
    ModelKind,
    OlsLearner,
    assign_folds,
    cls_weights,
    crossfit_cef,
    crossfit_fiv_pair,
    crossfit_model,
    shortstack_all,
)
from ddml.errors import DataError


class RecordingLearner:
    """Wraps a learner and records every fit's training data and seed."""

    def __init__(self, inner, log=None):
        self.inner = inner
        self.label = inner.label
        self.calls = log if log is not None else []

    def fit(self, X, y, seed=0):
        self.calls.append({"X": np.array(X, copy=True), "y": np.array(y, copy=True),
                           "seed": seed})
        return self.inner.fit(X, y, seed)


class MeanLearner:
    label = "mean"

    def fit(self, X, y, seed=0):
        mu = float(np.mean(y))

        class _Model:
            def predict(self, Xq):
                return np.full(len(Xq), mu)

        return _Model()


def _partial_data(n=40, seed=0, exact=False):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    d = x[:, 0] + rng.standard_normal(n)
    noise = 0.0 if exact else 0.3 * rng.standard_normal(n)
    y = x @ np.array([1.0, -0.5]) + noise
    return Dataset(y=y, d=d, x=x, z=np.empty((n, 0)))


class TestCrossfitCef:
    def test_exact_linear_cef_recovered(self):
        data = _partial_data(n=30, exact=True)
        folds = assign_folds(30, 2, 1, seed=1)
        fit = crossfit_cef(data, CefKind.Y_X, 0, OlsLearner(), folds, 0, master_seed=5)
        np.testing.assert_allclose(fit.oos, data.y, atol=1e-8)
        assert fit.mspe == pytest.approx(0.0, abs=1e-16)

    def test_each_observation_predicted_once(self):
        n, k = 20, 5
        x = np.arange(n, dtype=float).reshape(-1, 1)  # identify rows by value
        data = Dataset(y=np.zeros(n), d=np.zeros(n) + 1.0, x=x, z=np.empty((n, 0)))
        folds = assign_folds(n, k, 1, seed=2)

        predicted = []

        class TrackingModel:
            def predict(self, Xq):
                predicted.extend(Xq[:, 0].astype(int).tolist())
                return np.zeros(len(Xq))

        class TrackingLearner:
            label = "track"

            def fit(self, X, y, seed=0):
                return TrackingModel()

        crossfit_cef(data, CefKind.Y_X, 0, TrackingLearner(), folds, 0, master_seed=0)
        assert sorted(predicted) == list(range(n))

    def test_split_kind_trains_on_arm_only(self):
        rng = np.random.default_rng(3)
        n = 24
        x = np.arange(n, dtype=float).reshape(-1, 1)
        d = (rng.uniform(size=n) < 0.5).astype(float)
        data = Dataset(y=rng.standard_normal(n), d=d, x=x, z=np.empty((n, 0)))
        folds = assign_folds(n, 3, 1, seed=4)
        rec = RecordingLearner(MeanLearner())
        crossfit_cef(data, CefKind.Y_X_D1, 0, rec, folds, 0, master_seed=0)
        for k, call in enumerate(rec.calls, start=1):
            expected_rows = np.where(~folds.in_fold(0, k) & (d == 1.0))[0]
            np.testing.assert_array_equal(call["X"][:, 0].astype(int), expected_rows)

    def test_empty_arm_raises_with_fold_and_arm(self):
        n = 12
        d = np.zeros(n)
        d[:2] = 1.0  # only rows 0,1 treated
        data = Dataset(y=np.zeros(n), d=d, x=np.arange(n, dtype=float),
                       z=np.empty((n, 0)))
        folds = assign_folds(n, 6, 1, seed=0)
        with pytest.raises(DataError, match="fold .* arm"):
            crossfit_cef(data, CefKind.Y_X_D1, 0, MeanLearner(), folds, 0, master_seed=0)

    def test_leakage_fold_targets_do_not_matter(self):
        data = _partial_data(n=36, seed=5)
        folds = assign_folds(36, 3, 1, seed=6)
        fit = crossfit_cef(data, CefKind.Y_X, 0, OlsLearner(), folds, 0, master_seed=7)
        rng = np.random.default_rng(99)
        for k in (1, 2, 3):
            test = folds.in_fold(0, k)
            y_mod = data.y.copy()
            y_mod[test] = rng.standard_normal(test.sum()) * 100.0
            data_mod = Dataset(y=y_mod, d=data.d, x=data.x, z=data.z)
            fit_mod = crossfit_cef(data_mod, CefKind.Y_X, 0, OlsLearner(), folds, 0,
                                   master_seed=7)
            np.testing.assert_array_equal(fit.oos[test], fit_mod.oos[test])

    def test_fold_mspe_aggregates_to_overall(self):
        data = _partial_data(n=41, seed=8)
        folds = assign_folds(41, 4, 1, seed=9)
        fit = crossfit_cef(data, CefKind.Y_X, 0, OlsLearner(), folds, 0, master_seed=1)
        sizes = np.array([folds.in_fold(0, k).sum() for k in range(1, 5)])
        weighted = float(np.sum(fit.fold_mspe * sizes) / sizes.sum())
        assert weighted == pytest.approx(fit.mspe, abs=1e-10)

    def test_constant_learner_mspe_near_one_on_unit_variance(self):
        rng = np.random.default_rng(10)
        n = 4000
        y = rng.standard_normal(n)
        data = Dataset(y=y, d=np.ones(n), x=rng.standard_normal((n, 1)),
                       z=np.empty((n, 0)))
        folds = assign_folds(n, 5, 1, seed=2)
        fit = crossfit_cef(data, CefKind.Y_X, 0, MeanLearner(), folds, 0, master_seed=0)
        assert fit.mspe == pytest.approx(1.0, abs=0.1)


class TestCrossfitFiv:
    def _fiv_data(self, n=40, seed=0, exact_d=True):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, 2))
        z = rng.standard_normal(n)
        noise = np.zeros(n) if exact_d else 0.2 * rng.standard_normal(n)
        d = 0.7 * z + x[:, 0] - 0.3 * x[:, 1] + noise
        y = 0.5 * d + x[:, 1] + 0.1 * rng.standard_normal(n)
        return Dataset(y=y, d=d, x=x, z=z)

    def test_exact_first_stage_recovered(self):
        data = self._fiv_data(exact_d=True)
        folds = assign_folds(data.n, 4, 1, seed=3)
        p_fit, m_fit = crossfit_fiv_pair(data, OlsLearner(), folds, 0, master_seed=1)
        np.testing.assert_allclose(p_fit.oos, data.d[:, 0], atol=1e-6)

    def test_projection_step_trains_on_insample_fits(self):
        data = self._fiv_data(exact_d=False, seed=11)
        folds = assign_folds(data.n, 4, 1, seed=5)
        log = []
        rec = RecordingLearner(OlsLearner(), log=log)
        p_fit, m_fit = crossfit_fiv_pair(data, rec, folds, 0, master_seed=2)
        # calls: all four E[D|X,Z] fold fits first, then the four projections
        assert len(log) == 8
        proj_calls = log[4:]
        for k, call in enumerate(proj_calls, start=1):
            train = ~folds.in_fold(0, k)
            np.testing.assert_array_equal(call["y"], p_fit.insample[train, k - 1])
            assert not np.array_equal(call["y"], data.d[train, 0])

    def test_irrelevant_instrument_flags_weak(self):
        # D is an exact function of X alone: the first stage learns nothing
        # from Z, the constructed instrument collapses, and the estimator
        # reports degeneracy
        from ddml import estimate_fiv
        from ddml.errors import DegenerateError

        rng = np.random.default_rng(21)
        n = 60
        x = rng.standard_normal((n, 2))
        z = rng.standard_normal(n)
        d = x @ np.array([1.0, -0.5])  # no Z, no noise
        y = 0.5 * d + x[:, 0] + 0.1 * rng.standard_normal(n)
        data = Dataset(y=y, d=d, x=x, z=z)
        folds = assign_folds(n, 3, 1, seed=10)
        p_fit, m_fit = crossfit_fiv_pair(data, OlsLearner(), folds, 0, master_seed=4)
        inst = p_fit.oos - m_fit.oos
        d_res = d - m_fit.oos
        assert abs(np.cov(inst, d_res, ddof=0)[0, 1]) < 1e-10
        with pytest.raises(DegenerateError):
            estimate_fiv(y, d, np.zeros(n), p_fit.oos, m_fit.oos)

    def test_insample_stored_on_training_rows_only(self):
        data = self._fiv_data(seed=12)
        folds = assign_folds(data.n, 4, 1, seed=6)
        p_fit, _ = crossfit_fiv_pair(data, OlsLearner(), folds, 0, master_seed=3)
        for k in range(1, 5):
            test = folds.in_fold(0, k)
            assert np.all(np.isnan(p_fit.insample[test, k - 1]))
            assert not np.any(np.isnan(p_fit.insample[~test, k - 1]))


class TestShortStackAll:
    def test_single_learner_passthrough(self):
        data = _partial_data(n=30, seed=13)
        folds = assign_folds(30, 3, 1, seed=7)
        result = crossfit_model(data, ModelKind.PARTIAL,
                                {(CefKind.Y_X, 0): [OlsLearner()],
                                 (CefKind.D_X, 0): [OlsLearner()]},
                                folds, master_seed=4)
        ss = shortstack_all(data, result, 0)
        y_fit = result.get(CefKind.Y_X, 0, 0, 0)
        y_ss = [s for s in ss if s.kind is CefKind.Y_X][0]
        np.testing.assert_allclose(y_ss.preds, y_fit.oos, atol=1e-12)

    def test_shortstack_mspe_beats_each_learner(self):
        data = _partial_data(n=60, seed=14)
        folds = assign_folds(60, 3, 1, seed=8)
        learners = [OlsLearner(), MeanLearner()]
        result = crossfit_model(data, ModelKind.PARTIAL,
                                {(CefKind.Y_X, 0): learners,
                                 (CefKind.D_X, 0): learners},
                                folds, master_seed=5)
        for ssfit in shortstack_all(data, result, 0):
            fits = result.learners_for(ssfit.kind, ssfit.col, 0)
            for fit in fits:
                assert ssfit.mspe <= fit.mspe + 1e-9

    def test_fiv_stages_match_independent_recipe(self):
        rng = np.random.default_rng(15)
        n = 48
        x = rng.standard_normal((n, 2))
        z = rng.standard_normal(n)
        d = 0.6 * z + x[:, 0] + 0.3 * rng.standard_normal(n)
        y = 0.5 * d + x[:, 1] + 0.2 * rng.standard_normal(n)
        data = Dataset(y=y, d=d, x=x, z=z)
        folds = assign_folds(n, 3, 1, seed=9)
        learners = [OlsLearner(), MeanLearner()]
        result = crossfit_model(data, ModelKind.FIV,
                                {(CefKind.Y_X, 0): learners,
                                 (CefKind.D_XZ, 0): learners},
                                folds, master_seed=6)
        ss = shortstack_all(data, result, 0)
        p_ss = [s for s in ss if s.kind is CefKind.D_XZ][0]
        m_ss = [s for s in ss if s.kind is CefKind.D_X][0]

        p_fits = result.learners_for(CefKind.D_XZ, 0, 0)
        m_fits = result.learners_for(CefKind.D_X, 0, 0)
        P_oos = np.column_stack([f.oos for f in p_fits])

        # independent stage 2: per-fold weights from in-sample fits
        p_star_fold = np.empty(n)
        for k in (1, 2, 3):
            test = folds.in_fold(0, k)
            train = ~test
            P_in = np.column_stack([f.insample[train, k - 1] for f in p_fits])
            w = cls_weights(P_in, d[train]).weights
            p_star_fold[test] = P_oos[test] @ w
        np.testing.assert_allclose(p_ss.extra["foldwise_preds"], p_star_fold, atol=1e-10)

        # independent stage 2 full-sample solve
        w_full = cls_weights(P_oos, d).weights
        np.testing.assert_allclose(p_ss.preds, P_oos @ w_full, atol=1e-10)

        # independent stage 3: combine projections against the fold-wise
        # stacked first stage (not raw D)
        P_m = np.column_stack([f.oos for f in m_fits])
        w_m = cls_weights(P_m, p_star_fold).weights
        np.testing.assert_allclose(m_ss.preds, P_m @ w_m, atol=1e-10)


class TestDeterminismAndThreads:
    def test_threads_match_serial(self):
        data = _partial_data(n=50, seed=16)
        folds = assign_folds(50, 5, 2, seed=10)
        cef_learners = {(CefKind.Y_X, 0): [OlsLearner(), MeanLearner()],
                        (CefKind.D_X, 0): [OlsLearner(), MeanLearner()]}
        serial = crossfit_model(data, ModelKind.PARTIAL, cef_learners, folds,
                                master_seed=11, threads=1)
        parallel = crossfit_model(data, ModelKind.PARTIAL, cef_learners, folds,
                                  master_seed=11, threads=4)
        assert len(serial.fits) == len(parallel.fits)
        for a, b in zip(serial.fits, parallel.fits):
            assert (a.kind, a.col, a.learner_idx, a.rep) == (b.kind, b.col, b.learner_idx, b.rep)
            np.testing.assert_array_equal(a.oos, b.oos)
