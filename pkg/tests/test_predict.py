import numpy as np
import pytest
from scipy import stats

from conftest import linear_var_posterior, make_posterior
from vast.core import BaseLearnerParams, ConfigError, DataError, ModelConfig
from vast.data import DgpSpec
from vast.predict import (
    VARIANTS,
    PredictiveDraws,
    StudyResult,
    conditional_mean,
    evaluate,
    lpl_gaussian,
    lpl_joint,
    monte_carlo_study,
    predict_ast,
    recursive_forecast,
    rmse,
    simulate_predictive,
)
from vast.sampler import ChainSettings


def _vast(learners, Sigma, M, P=1, **meta):
    base = {"kind": "vast", "P": P, "K": M * P, "y_mean": np.zeros(M), "y_sd": np.ones(M)}
    return make_posterior([learners], [Sigma], {**base, **meta})


class TestMetrics:
    def test_rmse(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert rmse(np.arange(5.0), np.arange(5.0) + 2) == 2.0
        with pytest.raises(ValueError):
            rmse([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            rmse([], [])

    def test_lpl_unit_normalizer(self):
        assert lpl_gaussian([3.0], [3.0], [1 / (2 * np.pi)]) == pytest.approx(0.0, abs=1e-15)

    def test_lpl_at_mean(self):
        assert lpl_gaussian([1.0], [1.0], [0.3]) == pytest.approx(-0.5 * np.log(2 * np.pi * 0.3))

    def test_lpl_matches_scipy(self, rng):
        a, m, v = rng.standard_normal(10), rng.standard_normal(10), rng.uniform(0.5, 2, 10)
        assert lpl_gaussian(a, m, v) == pytest.approx(np.mean(stats.norm.logpdf(a, m, np.sqrt(v))))
        with pytest.raises(ValueError):
            lpl_gaussian(a, m, np.zeros(10))

    def test_joint_lpl_matches_scipy(self, rng):
        A = rng.standard_normal((3, 3))
        C = A @ A.T + np.eye(3)
        y, mu = rng.standard_normal(3), rng.standard_normal(3)
        assert lpl_joint(y[None], mu[None], C[None]) == pytest.approx(stats.multivariate_normal(mu, C).logpdf(y))
        with pytest.raises(ValueError):
            lpl_joint(y[None], mu[None], -C[None])


class TestPredictiveDraws:
    def test_summaries(self, rng):
        paths = rng.standard_normal((2, 3, 501))
        pred = PredictiveDraws(paths, names=["a", "b", "c"])
        np.testing.assert_allclose(pred.variance(), paths.var(axis=2, ddof=1))
        q = pred.quantiles()
        assert q.shape == (5, 2, 3)
        assert np.all(np.diff(q, axis=0) >= 0)
        table = pred.summary()
        assert list(table["variable"][:3]) == ["a", "b", "c"] and len(table) == 6
        assert pred.covariance(1, [0, 2]).shape == (2, 2)

    def test_single_draw_variance(self):
        assert np.all(PredictiveDraws(np.ones((1, 2, 1))).variance() == 0)

    def test_shape_check(self):
        with pytest.raises(ValueError):
            PredictiveDraws(np.ones((2, 2)))

    def test_evaluate(self):
        paths = np.array([[[0.0, 1.0, 2.0]], [[1.0, 2.0, 3.0]]])
        out = evaluate(PredictiveDraws(paths), np.array([1.0, 2.0]))
        assert out["rmse"] == 0.0
        assert out["lpl"] == pytest.approx(-0.5 * np.log(2 * np.pi))


class TestSimulation:
    def test_dynamics_free_model_is_constant(self, rng):
        learners = [BaseLearnerParams(rng.uniform(0.5, 3), rng.normal(), k % 2, b, b)
                    for k, b in enumerate(rng.standard_normal((4, 2)))]
        post = _vast(learners, 0.5 * np.eye(2), 2)
        pred = simulate_predictive(post, rng.standard_normal((3, 2)), 5, 4, return_means=True)
        expected = sum(p.beta0 for p in learners)
        np.testing.assert_allclose(pred.cond_means, np.broadcast_to(expected[None, :, None], (5, 2, 4)))

    def test_flat_transitions(self, rng):
        learners = [BaseLearnerParams(0.0, 0.0, 0, rng.standard_normal(1), rng.standard_normal(1)) for _ in range(3)]
        post = _vast(learners, np.array([[0.4]]), 1)
        pred = simulate_predictive(post, np.zeros(4), 4, 40_000, seed=2)
        level = sum((p.beta0 + p.beta1) / 2 for p in learners)[0]
        n = pred.n_draws
        assert np.all(np.abs(pred.mean()[:, 0] - level) < 3 * np.sqrt(0.4 / n))
        assert np.all(np.abs(pred.variance()[:, 0] - 0.4) < 3 * 0.4 * np.sqrt(2 / n))

    def test_skeleton_deterministic(self, rng):
        learners = [BaseLearnerParams(2.0, 0.1, k, rng.standard_normal(2), rng.standard_normal(2)) for k in range(2)]
        post = _vast(learners, np.eye(2), 2)
        pred = simulate_predictive(post, rng.standard_normal((2, 2)), 6, 10, zero_sigma=True)
        assert np.all(pred.paths == pred.paths[:, :, :1])
        q = pred.quantiles()
        assert np.all(q == q[:1])

    def test_linear_var_means(self, rng):
        A = np.array([[0.5, 0.1], [-0.2, 0.3]])
        post = linear_var_posterior(A, np.eye(2), nu=1e-4)
        y0 = np.array([1.0, -2.0])
        pred = simulate_predictive(post, y0[None], 4, 1, zero_sigma=True)
        for h in range(4):
            np.testing.assert_allclose(pred.paths[h, :, 0], np.linalg.matrix_power(A, h + 1) @ y0, atol=1e-6)

    def test_two_lags_feedback(self):
        # y_t = 0.5 y_{t-2} exactly via one saturated learner on lag 2
        learners = [BaseLearnerParams(1e-4, 0.0, 1, [2.0 * 0.5 / 1e-4], [-2.0 * 0.5 / 1e-4])]
        post = _vast(learners, np.array([[1.0]]), 1, P=2)
        pred = simulate_predictive(post, np.array([4.0, 2.0]), 4, 1, zero_sigma=True)
        np.testing.assert_allclose(pred.paths[:, 0, 0], [2.0, 1.0, 1.0, 0.5], atol=1e-6)

    def test_units(self, rng):
        learners = [BaseLearnerParams(1.0, 0.0, 0, [0.5], [0.5])]
        post = _vast(learners, np.array([[1.0]]), 1, y_mean=np.array([10.0]), y_sd=np.array([3.0]))
        pred = simulate_predictive(post, np.array([10.0]), 1, 1, zero_sigma=True)
        assert pred.paths[0, 0, 0] == pytest.approx(10.0 + 3.0 * 0.5)

    def test_conditional_mean_vectorized(self, rng):
        sets = [[BaseLearnerParams(rng.uniform(0.1, 2), rng.normal(), int(rng.integers(3)), rng.normal(size=2),
                                   rng.normal(size=2)) for _ in range(4)] for _ in range(3)]
        post = make_posterior(sets, [np.eye(2)] * 3, {"K": 3})
        x = rng.standard_normal((3, 5, 3))
        got = conditional_mean(post, x)
        for d, learners in enumerate(sets):
            for i in range(5):
                ref = sum(p.beta0 / (1 + np.exp(-p.nu * (x[d, i, p.delta] - p.mu)))
                          + p.beta1 * (1 - 1 / (1 + np.exp(-p.nu * (x[d, i, p.delta] - p.mu)))) for p in learners)
                np.testing.assert_allclose(got[d, i], ref)

    def test_errors(self, rng):
        post = _vast([BaseLearnerParams(1.0, 0.0, 0, [0.0, 0.0], [0.0, 0.0])], np.eye(2), 2)
        with pytest.raises(ConfigError):
            simulate_predictive(post, np.zeros((2, 2)), 0)
        with pytest.raises(DataError):
            simulate_predictive(post, np.zeros((2, 3)), 1)
        ast = make_posterior([[BaseLearnerParams(1.0, 0.0, 0, [0.0], [0.0])]], [np.eye(1)], {"kind": "ast", "K": 4})
        with pytest.raises(ConfigError):
            simulate_predictive(ast, np.zeros(4), 1)
        bad = _vast([BaseLearnerParams(1.0, 0.0, 0, [0.0, 0.0], [0.0, 0.0])], -np.eye(2), 2)
        with pytest.raises(ConfigError):
            simulate_predictive(bad, np.zeros((1, 2)), 1)


class TestPredictAst:
    def test_one_step(self, rng):
        learners = [BaseLearnerParams(1.0, 0.0, 1, [2.0], [-2.0])]
        meta = {"kind": "ast", "K": 2, "x_mean": np.array([0.0, 1.0]), "x_sd": np.array([1.0, 2.0]),
                "y_mean": np.array([5.0]), "y_sd": np.array([2.0])}
        post = make_posterior([learners], [np.array([[0.25]])], meta)
        X = np.array([[0.0, 1.0], [0.0, 5.0]])
        pred = predict_ast(post, X, 20_000, seed=1)
        S = 1 / (1 + np.exp(-np.array([0.0, 2.0])))
        mean = 5.0 + 2.0 * (2 * S - 2 * (1 - S))
        assert pred.paths.shape == (2, 1, 20_000)
        assert np.all(np.abs(pred.mean()[:, 0] - mean) < 3 * 1.0 / np.sqrt(20_000))
        np.testing.assert_allclose(pred.variance()[:, 0], 1.0, rtol=0.05)
        with pytest.raises(DataError):
            predict_ast(post, np.zeros((1, 3)))


class TestStudy:
    def test_variants(self):
        assert VARIANTS["fix-both"] == {"fix_nu": 10.0, "fix_mu_to_mean": True}
        assert VARIANTS["estimate-both"] == {}

    def test_baseline_against_itself(self):
        r = np.abs(np.random.default_rng(0).standard_normal((3, 2, 2)))
        res = StudyResult(["estimate-both", "fix-both"], [1, 5], r, -r)
        ratio, diff = res.relative("estimate-both")
        np.testing.assert_array_equal(ratio.loc["estimate-both"], 1.0)
        np.testing.assert_array_equal(diff.loc["estimate-both"], 0.0)
        with pytest.raises(ConfigError):
            res.relative("fix-mu")

    def test_small_study_deterministic_and_worker_invariant(self):
        kw = dict(reps=2, J_grid=(1, 2), variants=("estimate-both", "fix-both"),
                  settings=ChainSettings(seed=3, n_burn=20, n_save=10), dgp=DgpSpec(T=60, K=5))
        a = monte_carlo_study(**kw)
        b = monte_carlo_study(**kw, workers=2)
        np.testing.assert_array_equal(a.rmse, b.rmse)
        np.testing.assert_array_equal(a.lpl, b.lpl)
        assert a.rmse.shape == (2, 2, 2)
        assert set(a.accept) == {(r, v, J) for r in range(2) for v in kw["variants"] for J in (1, 2)}
        assert len(a.relevance) == 4
        assert a.table().shape == (4, 2)

    @pytest.mark.parametrize("kw", [{"variants": ("nope",)}, {"reps": 0}, {"n_train": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            monte_carlo_study(**{"settings": ChainSettings(n_burn=1, n_save=1), "dgp": DgpSpec(T=20, K=2), **kw})


class TestRecursive:
    def test_expanding_window(self, rng):
        Y = rng.standard_normal((30, 2))
        res = recursive_forecast(Y, ModelConfig(J=2), ChainSettings(seed=0, n_burn=10, n_save=20), 26, H=2,
                                 n_paths_per_draw=5, focus=[0, 1])
        assert res.origins == [26, 27, 28, 29]
        np.testing.assert_array_equal(res.actuals[0], Y[26:28])
        assert np.isnan(res.actuals[-1, 1]).all()
        assert np.all(np.isfinite(res.joint_lpl))
        m = res.metrics(0)
        assert list(m.columns) == ["rmse", "lpl"] and len(m) == 2

    def test_invalid_split(self, rng):
        with pytest.raises(ConfigError):
            recursive_forecast(rng.standard_normal((10, 2)), ModelConfig(J=1), ChainSettings(), 10)
