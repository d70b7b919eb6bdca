import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vast.core import BaseLearnerParams, ModelConfig, Posterior  # noqa: E402

ACCEPTANCE = {}


def record(criterion: str, passed: bool, detail: str = "") -> bool:
    """Store one acceptance line; the terminal summary prints them in order."""
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda k: (int("".join(ch for ch in k if ch.isdigit()) or 0), k)
    for crit in sorted(ACCEPTANCE, key=key):
        ok, detail = ACCEPTANCE[crit]
        terminalreporter.write_line(f"criterion {crit:>4}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_posterior(learner_sets, Sigmas, meta=None):
    """Posterior from explicit per-draw learner lists and covariance matrices."""
    draws_nu = [[p.nu for p in ls] for ls in learner_sets]
    return Posterior(
        nu=draws_nu,
        mu=[[p.mu for p in ls] for ls in learner_sets],
        delta=[[p.delta for p in ls] for ls in learner_sets],
        beta0=[[p.beta0 for p in ls] for ls in learner_sets],
        beta1=[[p.beta1 for p in ls] for ls in learner_sets],
        Sigma=np.asarray(Sigmas, dtype=float),
        meta=meta,
    )


def linear_var_posterior(A, Sigma, nu=1e-3, n_draws=1):
    """A VAST posterior whose learner sum is the VAR(1) map x -> A x up to O(nu^2).

    One learner per lagged variable k: S ~ 1/2 + nu x_k / 4, so
    beta0 - beta1 = 4 A[:, k] / nu with beta0 = -beta1 gives slope A[:, k].
    """
    A = np.asarray(A, dtype=float)
    M = A.shape[0]
    learners = [
        BaseLearnerParams(nu, 0.0, k, 2.0 * A[:, k] / nu, -2.0 * A[:, k] / nu) for k in range(M)
    ]
    meta = {"kind": "vast", "P": 1, "K": M, "y_mean": np.zeros(M), "y_sd": np.ones(M),
            "names": [f"y{i + 1}" for i in range(M)]}
    return make_posterior([learners] * n_draws, [Sigma] * n_draws, meta)


@pytest.fixture
def small_cfg():
    return ModelConfig(J=3, a_sigma=3.0, b_sigma=2.0, a_nu=3.0, b_nu=2.0, sigma2_mu=1.0)
