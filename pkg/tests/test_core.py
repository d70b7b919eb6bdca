import numpy as np
import pandas as pd
import pytest

from conftest import make_posterior
from vast.core import (
    BaseLearnerParams,
    ConfigError,
    DataError,
    DrawFileError,
    ModelConfig,
    Posterior,
    PosteriorDraw,
    TimeSeriesPanel,
    parameter_count,
)


def _posterior(rng, D=4, J=3, M=2):
    sets = [
        [BaseLearnerParams(rng.uniform(0.1, 3), rng.normal(), int(rng.integers(5)), rng.normal(size=M),
                           rng.normal(size=M)) for _ in range(J)]
        for _ in range(D)
    ]
    A = rng.standard_normal((D, M, M))
    Sigmas = A @ A.transpose(0, 2, 1) + np.eye(M)
    return make_posterior(sets, Sigmas, {"kind": "vast", "P": 1, "K": 5, "y_mean": np.arange(M) * 1.0,
                                         "names": [f"s{i}" for i in range(M)]})


class TestModelConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.J == 10 and cfg.a_Sigma == 1.0
        assert cfg.prior_precision == 10.0

    def test_a_sigma_tracks_M(self):
        assert ModelConfig(M=4).a_Sigma == 4.0
        assert ModelConfig(M=4).with_(M=6).a_Sigma == 6.0

    @pytest.mark.parametrize("bad", [{"J": 0}, {"P": 0}, {"phi": 0.0}, {"a_sigma": -1.0}, {"b_nu": np.inf},
                                     {"M": 3, "a_Sigma": 1.5}, {"fix_nu": 0.0},
                                     {"fix_mu": 0.0, "fix_mu_to_mean": True}])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ConfigError):
            ModelConfig(**bad)

    def test_dict_round_trip(self):
        cfg = ModelConfig(J=7, M=3, fix_nu=10.0)
        assert ModelConfig.from_dict({**cfg.to_dict(), "unrelated": 1}) == cfg

    def test_S_Sigma(self):
        np.testing.assert_array_equal(ModelConfig(M=2, S_Sigma_scale=0.5).S_Sigma, 0.5 * np.eye(2))


class TestParameterCount:
    def test_smallest(self):
        assert parameter_count(ModelConfig(J=1, M=1)).vast == 6

    def test_large_model(self):
        c = parameter_count(ModelConfig(J=50, M=80, P=5))
        assert c.vast == 11390
        assert c.linear_var == 35240


class TestBaseLearnerParams:
    def test_frozen_arrays(self):
        p = BaseLearnerParams(1.0, 0.0, 2, [1.0, 2.0], [3.0, 4.0])
        assert p.M == 2
        with pytest.raises(ValueError):
            p.beta0[0] = 5.0

    def test_selection_vector(self):
        np.testing.assert_array_equal(BaseLearnerParams(1.0, 0.0, 2, [0.0], [0.0]).selection_vector(4),
                                      [0, 0, 1, 0])
        with pytest.raises(IndexError):
            BaseLearnerParams(1.0, 0.0, 4, [0.0], [0.0]).selection_vector(4)

    @pytest.mark.parametrize("args", [(-1.0, 0.0, 0, [0.0], [0.0]), (1.0, 0.0, -1, [0.0], [0.0]),
                                      (1.0, 0.0, 0, [0.0], [0.0, 1.0]), (1.0, 0.0, 0, [np.nan], [0.0])])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            BaseLearnerParams(*args)


class TestPosterior:
    def test_indexing_and_from_draws(self, rng):
        post = _posterior(rng)
        draw = post[2]
        assert isinstance(draw, PosteriorDraw)
        assert draw.J == 3 and draw.M == 2
        back = Posterior.from_draws(list(post), meta=post.meta)
        np.testing.assert_array_equal(back.beta1, post.beta1)
        np.testing.assert_array_equal(back.delta, post.delta)

    def test_sigma2_only_univariate(self, rng):
        with pytest.raises(AttributeError):
            _posterior(rng)[0].sigma2
        assert _posterior(rng, M=1)[0].sigma2 > 0

    def test_subset(self, rng):
        post = _posterior(rng)
        sub = post.subset([3, 1])
        assert len(sub) == 2
        np.testing.assert_array_equal(sub.nu, post.nu[[3, 1]])
        assert sub.K == 5

    def test_shape_check(self, rng):
        post = _posterior(rng)
        with pytest.raises(ValueError):
            Posterior(post.nu, post.mu[:, :2], post.delta, post.beta0, post.beta1, post.Sigma)

    def test_save_load_round_trip(self, rng, tmp_path):
        post = _posterior(rng)
        post.loglik = np.arange(len(post), dtype=float)
        path = tmp_path / "x.draws"
        post.save(path)
        back = Posterior.load(path)
        for name in ("nu", "mu", "delta", "beta0", "beta1", "Sigma", "loglik"):
            np.testing.assert_array_equal(getattr(back, name), getattr(post, name))
        assert back.meta["names"] == ["s0", "s1"]
        np.testing.assert_array_equal(back.meta["y_mean"], [0.0, 1.0])

    def test_corrupt_files(self, rng, tmp_path):
        buf = _posterior(rng).to_bytes()
        with pytest.raises(DrawFileError):
            Posterior.from_bytes(b"XXXX" + buf[4:])
        with pytest.raises(DrawFileError):
            Posterior.from_bytes(buf[:-8])
        with pytest.raises(DrawFileError):
            Posterior.from_bytes(buf[:3])


class TestTimeSeriesPanel:
    def test_defaults(self):
        p = TimeSeriesPanel(np.zeros((5, 2)), ["a", "b"])
        assert (p.T, p.M) == (5, 2)
        assert p.tcodes == [1, 1] and p.classes == ["slow", "slow"]

    def test_select_and_head(self):
        p = TimeSeriesPanel(np.arange(12.0).reshape(6, 2), ["a", "b"], [1, 5], ["slow", "fast"],
                            pd.RangeIndex(6))
        q = p.select(["b"])
        assert q.names == ["b"] and q.tcodes == [5] and q.classes == ["fast"]
        assert p.head(3).T == 3
        with pytest.raises(DataError, match="zz"):
            p.select(["zz"])

    @pytest.mark.parametrize("kw", [{"tcodes": [8, 1]}, {"classes": ["slow", "medium"]},
                                    {"names": ["a"]}])
    def test_invalid_metadata(self, kw):
        args = {"values": np.zeros((4, 2)), "names": ["a", "b"], **kw}
        with pytest.raises(DataError):
            TimeSeriesPanel(**args)

    def test_missing_values_named(self):
        vals = np.zeros((4, 2))
        vals[1, 1] = np.nan
        with pytest.raises(DataError, match="b"):
            TimeSeriesPanel(vals, ["a", "b"])

    def test_short_panel_warns(self):
        p = TimeSeriesPanel(np.zeros((5, 3)), ["a", "b", "c"])
        with pytest.warns(UserWarning):
            p.check_size(2)
