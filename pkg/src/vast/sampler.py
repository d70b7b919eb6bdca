"""Backfitting MCMC for the AST and VAST models.

One sweep visits every learner j and, against the partial residual of the
other learners,

1. draws the selected covariate from its categorical full conditional,
2. draws (nu_j, mu_j) with one joint random-walk Metropolis-Hastings step,

both with beta_j and the error (co)variance integrated out, then redraws
beta_j from its conditional so the next partial residual is current. After
the learner loop the error (co)variance is drawn given Z (marginal of the
coefficients) and finally all coefficients given the (co)variance and Z.

The other learners' coefficients enter the collapsed likelihood through their
prior, which depends on the error scale; this is folded into the inverse-Gamma
(inverse-Wishart) hyperparameters so steps 1-2 target the exact conditional.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .conjugate import (
    _chol,
    invwishart_factor,
    logml_candidates_multi,
    logml_candidates_uni,
    sample_invgamma,
    sample_mniw_coefficients,
)
from .core import BaseLearnerParams, ConfigError, ModelConfig, NumericalError, Posterior
from .data import build_lag_matrix, standardize
from .learners import TransitionMatrix, logistic

log = logging.getLogger(__name__)

LOW_ACCEPT, HIGH_ACCEPT = 0.30, 0.60
SHRINK, GROW = 0.9, 1.1


@dataclass
class ChainSettings:
    seed: int = 0
    n_burn: int = 2000
    n_save: int = 2000
    thin: int = 1
    adapt_window: int = 50
    init_scale: float = 0.1
    check_residuals: bool = False

    def __post_init__(self):
        for name in ("n_burn", "n_save", "thin", "adapt_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.init_scale > 0:
            raise ConfigError("init_scale must be positive")

    @property
    def n_iter(self) -> int:
        return self.n_burn + self.n_save * self.thin

    @property
    def freeze_at(self) -> int:
        """First sweep at which proposal scales are frozen."""
        return self.n_burn // 2


@dataclass
class MhState:
    """Per-learner proposal standard deviations and acceptance counters."""

    s_nu: np.ndarray
    s_mu: np.ndarray
    win_acc: np.ndarray
    win_prop: np.ndarray
    post_acc: np.ndarray
    post_prop: np.ndarray
    adapting: bool = True

    @classmethod
    def create(cls, J: int, scale: float = 0.1) -> MhState:
        z = lambda: np.zeros(J, dtype=np.int64)  # noqa: E731
        return cls(np.full(J, scale), np.full(J, scale), z(), z(), z(), z())

    def record(self, j: int, accepted: bool) -> None:
        self.win_prop[j] += 1
        self.win_acc[j] += accepted
        if not self.adapting:
            self.post_prop[j] += 1
            self.post_acc[j] += accepted

    def post_freeze_rate(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.post_prop > 0, self.post_acc / np.maximum(self.post_prop, 1), np.nan)


def adapt_proposals(mh: MhState) -> MhState:
    """Rescale proposals from the last window's acceptance and reset the window.

    Below 30% acceptance both scales shrink by 0.9, above 60% they grow by 1.1.
    Does nothing once adaptation is frozen.
    """
    if not mh.adapting:
        return mh
    seen = mh.win_prop > 0
    rate = np.where(seen, mh.win_acc / np.maximum(mh.win_prop, 1), 0.45)
    factor = np.where(rate < LOW_ACCEPT, SHRINK, np.where(rate > HIGH_ACCEPT, GROW, 1.0))
    mh.s_nu = mh.s_nu * factor
    mh.s_mu = mh.s_mu * factor
    mh.win_acc[:] = 0
    mh.win_prop[:] = 0
    return mh


def log_prior_nu_mu(nu: float, mu: float, cfg: ModelConfig) -> float:
    """Inverse-Gamma(a_nu, b_nu) on nu plus N(0, sigma2_mu) on mu (up to constants)."""
    if not nu > 0:
        return -math.inf
    return -(cfg.a_nu + 1.0) * math.log(nu) - cfg.b_nu / nu - 0.5 * mu * mu / cfg.sigma2_mu


# -- conjugate families --------------------------------------------------------


class _PairFactor:
    """Cholesky factor of the 2 x 2 precision [[z00+lam, z01], [z01, z11+lam]]."""

    __slots__ = ("l00", "l10", "l11")

    def __init__(self, p00, p01, p11):
        if not p00 > 0:
            raise NumericalError("learner posterior precision is not positive definite")
        self.l00 = math.sqrt(p00)
        self.l10 = p01 / self.l00
        d = p11 - self.l10 * self.l10
        if not d > 0:
            raise NumericalError("learner posterior precision is not positive definite")
        self.l11 = math.sqrt(d)

    def solve(self, b):
        """P^-1 b for b of shape (2,) or (2, M)."""
        y0 = b[0] / self.l00
        y1 = (b[1] - self.l10 * y0) / self.l11
        x1 = y1 / self.l11
        x0 = (y0 - self.l10 * x1) / self.l00
        return np.stack([x0, x1])

    def solve_upper(self, z):
        """L^-T z: a draw with covariance P^-1 when z is standard normal."""
        x1 = z[1] / self.l11
        x0 = (z[0] - self.l10 * x1) / self.l00
        return np.stack([x0, x1])


def _pair_factor(s, lam) -> _PairFactor:
    s2 = float(s @ s)
    s1 = float(s.sum())
    return _PairFactor(s2 + lam, s1 - s2, s.size - 2.0 * s1 + s2 + lam)


class _Univariate:
    """NIG algebra for M = 1, inverse-Gamma(shape, rate) on sigma2."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.lam = cfg.prior_precision

    def prior_given_others(self, B0, B1, j):
        ss = float(np.sum(B0**2) + np.sum(B1**2) - B0[j] @ B0[j] - B1[j] @ B1[j])
        J = B0.shape[0]
        return self.cfg.a_sigma + (J - 1.0), self.cfg.b_sigma + 0.5 * self.lam * ss

    def logml(self, R, S, prior):
        return logml_candidates_uni(R[:, 0], S, self.lam, prior[0], prior[1])

    def draw_learner(self, R, s, prior, rng):
        r = R[:, 0]
        fac = _pair_factor(s, self.lam)
        c0 = s @ r
        zr = np.array([c0, r.sum() - c0])
        bbar = fac.solve(zr)
        rss = max(float(r @ r - zr @ bbar), 0.0)
        sigma2 = sample_invgamma(prior[0] + 0.5 * r.size, prior[1] + 0.5 * rss, rng)
        b = bbar + math.sqrt(sigma2) * fac.solve_upper(rng.standard_normal(2))
        return b[:1], b[1:]

    def draw_all(self, Y, Z, rng):
        y = Y[:, 0]
        P = Z.T @ Z
        P[np.diag_indices_from(P)] += self.lam
        L = _chol(P, "posterior precision")
        zy = Z.T @ y
        bbar = linalg.cho_solve((L, True), zy)
        rss = max(float(y @ y - zy @ bbar), 0.0)
        sigma2 = sample_invgamma(self.cfg.a_sigma + 0.5 * y.size, self.cfg.b_sigma + 0.5 * rss, rng)
        b = bbar + math.sqrt(sigma2) * linalg.solve_triangular(L.T, rng.standard_normal(bbar.size), lower=False)
        return b[:, None], np.array([[sigma2]])


class _Multivariate:
    """Matrix-normal/inverse-Wishart algebra for M >= 1."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.lam = cfg.prior_precision

    def prior_given_others(self, B0, B1, j):
        G = B0.T @ B0 + B1.T @ B1 - np.outer(B0[j], B0[j]) - np.outer(B1[j], B1[j])
        J = B0.shape[0]
        return self.cfg.a_Sigma + 2.0 * (J - 1.0), self.cfg.S_Sigma + self.lam * G

    def logml(self, R, S, prior):
        return logml_candidates_multi(R, S, self.lam, prior[0], prior[1])

    def draw_learner(self, R, s, prior, rng):
        fac = _pair_factor(s, self.lam)
        c0 = s @ R
        ZR = np.vstack([c0, R.sum(axis=0) - c0])
        Bbar = fac.solve(ZR)
        Sbar = prior[1] + R.T @ R - ZR.T @ Bbar
        G = invwishart_factor(prior[0] + R.shape[0], Sbar, rng)
        B = Bbar + fac.solve_upper(rng.standard_normal(Bbar.shape)) @ G.T
        return B[0], B[1]

    def draw_all(self, Y, Z, rng):
        P = Z.T @ Z
        P[np.diag_indices_from(P)] += self.lam
        L = _chol(P, "posterior precision")
        ZY = Z.T @ Y
        Bbar = linalg.cho_solve((L, True), ZY)
        Sbar = self.cfg.S_Sigma + Y.T @ Y - ZY.T @ Bbar
        G = invwishart_factor(self.cfg.a_Sigma + Y.shape[0], Sbar, rng)
        Sigma = G @ G.T
        return sample_mniw_coefficients(Bbar, L, G, rng), (Sigma + Sigma.T) / 2


# -- the sampler -----------------------------------------------------------------


@dataclass
class ChainDiagnostics:
    s_nu: np.ndarray
    s_mu: np.ndarray
    accept_rate: np.ndarray
    loglik_trace: np.ndarray
    scale_trace: np.ndarray
    window_rates: list = field(default_factory=list)

    def write(self, prefix) -> tuple[Path, Path]:
        """Write ``<prefix>.accept.tsv`` and ``<prefix>.trace.tsv``."""
        prefix = Path(prefix)
        acc = prefix.with_name(prefix.name + ".accept.tsv")
        trace = prefix.with_name(prefix.name + ".trace.tsv")
        with acc.open("w") as f:
            f.write("learner\ts_nu\ts_mu\taccept_rate_post_freeze\n")
            for j, (a, b, r) in enumerate(zip(self.s_nu, self.s_mu, self.accept_rate)):
                f.write(f"{j}\t{a:.6g}\t{b:.6g}\t{r:.4f}\n")
        with trace.open("w") as f:
            f.write("sweep\tloglik\ttrace_Sigma\n")
            for i, (ll, sc) in enumerate(zip(self.loglik_trace, self.scale_trace)):
                f.write(f"{i}\t{ll:.8g}\t{sc:.8g}\n")
        return acc, trace


class BackfittingSampler:
    """State and transition kernel of one chain.

    Parameters
    ----------
    Y : (T, M) response matrix (a vector is treated as M = 1)
    X : (T, K) covariates the transitions select from
    family : "uni" for the inverse-Gamma error model, "multi" for inverse-Wishart
    """

    def __init__(self, Y, X, cfg: ModelConfig, rng: np.random.Generator, *, family="uni",
                 init=None, init_scale=0.1, check_residuals=False):
        Y = np.asarray(Y, dtype=float)
        self.Y = Y[:, None] if Y.ndim == 1 else Y
        self.X = np.asarray(X, dtype=float)
        if self.X.shape[0] != self.Y.shape[0]:
            raise ConfigError(f"Y has {self.Y.shape[0]} rows but X has {self.X.shape[0]}")
        self.T, self.M = self.Y.shape
        self.K = self.X.shape[1]
        if family == "uni" and self.M != 1:
            raise ConfigError("the univariate family needs M = 1")
        self.cfg = cfg
        self.rng = rng
        self.family = _Univariate(cfg) if family == "uni" else _Multivariate(cfg)
        self.check_residuals = check_residuals
        self.col_means = self.X.mean(axis=0)
        J = cfg.J
        self.mh = MhState.create(J, init_scale)
        if init is None:
            delta = rng.integers(self.K, size=J)
            self.delta = delta.astype(np.int64)
            self.nu = np.full(J, 1.0 if cfg.fix_nu is None else cfg.fix_nu)
            self.mu = np.zeros(J)
            self.B0 = np.zeros((J, self.M))
            self.B1 = np.zeros((J, self.M))
            self.Sigma = np.eye(self.M)
        else:
            init = list(init)
            if len(init) != J:
                raise ConfigError(f"init has {len(init)} learners, cfg.J={J}")
            self.delta = np.array([p.delta for p in init], dtype=np.int64)
            self.nu = np.array([p.nu for p in init], dtype=float)
            self.mu = np.array([p.mu for p in init], dtype=float)
            self.B0 = np.array([p.beta0 for p in init], dtype=float).reshape(J, self.M)
            self.B1 = np.array([p.beta1 for p in init], dtype=float).reshape(J, self.M)
            self.Sigma = np.eye(self.M)
        if np.any(self.delta >= self.K) or np.any(self.delta < 0):
            raise ConfigError("initial delta outside covariate range")
        if cfg.fix_nu is not None:
            self.nu[:] = cfg.fix_nu
        if cfg.fix_mu is not None:
            self.mu[:] = cfg.fix_mu
        elif cfg.fix_mu_to_mean:
            self.mu = self.col_means[self.delta].copy()
        self.Z = TransitionMatrix(np.empty((self.T, 2 * J), order="F"))
        for j in range(J):
            self.Z.set_columns(j, self._transition(j))
        self._recompute_fits()
        self.sweeps_done = 0

    # -- helpers

    def _transition(self, j, nu=None, mu=None, delta=None):
        nu = self.nu[j] if nu is None else nu
        mu = self.mu[j] if mu is None else mu
        delta = self.delta[j] if delta is None else delta
        return logistic(nu * (self.X[:, delta] - mu))

    def _recompute_fits(self):
        Z = self.Z.Z
        S = Z[:, 0::2]
        self.fits = S[:, :, None] * self.B0[None] + Z[:, 1::2][:, :, None] * self.B1[None]
        self.total = self.fits.sum(axis=1)

    def set_response(self, Y):
        Y = np.asarray(Y, dtype=float)
        self.Y = Y[:, None] if Y.ndim == 1 else Y

    def learners(self) -> list[BaseLearnerParams]:
        return [
            BaseLearnerParams(self.nu[j], self.mu[j], self.delta[j], self.B0[j], self.B1[j])
            for j in range(self.cfg.J)
        ]

    def loglik(self) -> float:
        E = self.Y - self.total
        L = _chol(self.Sigma, "Sigma")
        W = linalg.solve_triangular(L, E.T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return float(-0.5 * (self.T * (self.M * math.log(2 * math.pi) + logdet) + np.sum(W * W)))

    # -- steps

    def sample_delta(self, j, R, prior) -> int:
        cfg = self.cfg
        if cfg.fix_delta or self.K == 1:
            return int(self.delta[j])
        mu = self.col_means if cfg.fix_mu_to_mean else self.mu[j]
        S = logistic(self.nu[j] * (self.X - mu))
        lml = self.family.logml(R, S, prior)
        if not np.any(np.isfinite(lml)):
            raise NumericalError(f"learner {j}: all candidate log marginal likelihoods are non-finite")
        p = np.exp(lml - np.max(lml))
        p /= p.sum()
        k = int(np.searchsorted(np.cumsum(p), self.rng.random(), side="right"))
        k = min(k, self.K - 1)
        self.delta[j] = k
        if cfg.fix_mu_to_mean:
            self.mu[j] = self.col_means[k]
        return k

    def sample_nu_mu(self, j, R, prior) -> bool | None:
        cfg = self.cfg
        free_nu = cfg.fix_nu is None
        free_mu = cfg.fix_mu is None and not cfg.fix_mu_to_mean
        if not (free_nu or free_mu):
            return None
        nu, mu = self.nu[j], self.mu[j]
        nu_p = nu + self.mh.s_nu[j] * self.rng.standard_normal() if free_nu else nu
        mu_p = mu + self.mh.s_mu[j] * self.rng.standard_normal() if free_mu else mu
        accepted = False
        if nu_p > 0:
            x = self.X[:, self.delta[j]]
            S = np.column_stack([logistic(nu * (x - mu)), logistic(nu_p * (x - mu_p))])
            cur, prop = self.family.logml(R, S, prior)
            log_ratio = prop + log_prior_nu_mu(nu_p, mu_p, cfg) - cur - log_prior_nu_mu(nu, mu, cfg)
            if log_ratio >= 0 or math.log(self.rng.random()) < log_ratio:
                self.nu[j], self.mu[j] = nu_p, mu_p
                accepted = True
        self.mh.record(j, accepted)
        return accepted

    def sweep(self):
        cfg = self.cfg
        for j in range(cfg.J):
            R = self.Y - self.total + self.fits[:, j]
            prior = self.family.prior_given_others(self.B0, self.B1, j)
            self.sample_delta(j, R, prior)
            self.sample_nu_mu(j, R, prior)
            s = self._transition(j)
            self.Z.set_columns(j, s)
            b0, b1 = self.family.draw_learner(R, s, prior, self.rng)
            self.B0[j], self.B1[j] = b0, b1
            new_fit = np.outer(s, b0) + np.outer(1.0 - s, b1)
            self.total += new_fit - self.fits[:, j]
            self.fits[:, j] = new_fit
            if self.check_residuals:
                direct = self.Y - self.fits.sum(axis=1)
                if np.max(np.abs(direct - (self.Y - self.total))) > 1e-10:
                    raise NumericalError(f"sweep {self.sweeps_done}, learner {j}: residual drift")
        B, Sigma = self.family.draw_all(self.Y, self.Z.Z, self.rng)
        self.B0 = B[0::2].copy()
        self.B1 = B[1::2].copy()
        self.Sigma = Sigma
        self._recompute_fits()
        if not (np.all(np.isfinite(self.B0)) and np.all(np.isfinite(self.B1)) and np.all(np.isfinite(Sigma))
                and np.all(np.isfinite(self.nu)) and np.all(np.isfinite(self.mu))):
            raise NumericalError(
                f"non-finite state after sweep {self.sweeps_done}: "
                f"nu range [{np.nanmin(self.nu):.3g}, {np.nanmax(self.nu):.3g}], "
                f"max |beta| {np.nanmax(np.abs(np.r_[self.B0.ravel(), self.B1.ravel()])):.3g}"
            )
        self.sweeps_done += 1


def run_chain(Y, X, cfg: ModelConfig, settings: ChainSettings, *, family="uni", init=None,
              meta=None, progress=None) -> Posterior:
    """Run burn-in plus ``n_save`` thinned sweeps and return the retained draws."""
    rng = np.random.default_rng(settings.seed)
    smp = BackfittingSampler(
        Y, X, cfg, rng, family=family, init=init, init_scale=settings.init_scale,
        check_residuals=settings.check_residuals,
    )
    J, M, D = cfg.J, smp.M, settings.n_save
    out = dict(
        nu=np.empty((D, J)), mu=np.empty((D, J)), delta=np.empty((D, J), dtype=np.int64),
        beta0=np.empty((D, J, M)), beta1=np.empty((D, J, M)), Sigma=np.empty((D, M, M)), loglik=np.empty(D),
    )
    ll_trace = np.empty(settings.n_iter)
    sc_trace = np.empty(settings.n_iter)
    window_rates = []
    d = 0
    for it in range(settings.n_iter):
        if it == settings.freeze_at:
            smp.mh.adapting = False
            smp.mh.win_acc[:] = 0
            smp.mh.win_prop[:] = 0
        smp.sweep()
        if (it + 1) % settings.adapt_window == 0:
            with np.errstate(invalid="ignore", divide="ignore"):
                window_rates.append(smp.mh.win_acc / np.maximum(smp.mh.win_prop, 1))
            if smp.mh.adapting:
                adapt_proposals(smp.mh)
            else:
                smp.mh.win_acc[:] = 0
                smp.mh.win_prop[:] = 0
        ll = smp.loglik()
        ll_trace[it] = ll
        sc_trace[it] = float(np.trace(smp.Sigma))
        if it >= settings.n_burn and (it - settings.n_burn + 1) % settings.thin == 0:
            out["nu"][d], out["mu"][d], out["delta"][d] = smp.nu, smp.mu, smp.delta
            out["beta0"][d], out["beta1"][d], out["Sigma"][d] = smp.B0, smp.B1, smp.Sigma
            out["loglik"][d] = ll
            d += 1
        if progress is not None:
            progress(it)
    diag = ChainDiagnostics(
        smp.mh.s_nu.copy(), smp.mh.s_mu.copy(), smp.mh.post_freeze_rate(), ll_trace, sc_trace, window_rates,
    )
    meta = dict(meta or {})
    meta.setdefault("K", smp.K)
    meta.setdefault("config", cfg.to_dict())
    meta.setdefault("settings", {k: getattr(settings, k) for k in settings.__dataclass_fields__})
    return Posterior(**out, meta=meta, diagnostics=diag)


def run_chain_ast(y, X, cfg: ModelConfig, settings: ChainSettings, *, standardize_data=True,
                  init=None) -> Posterior:
    """Fit the univariate AST model y_t = sum_j g(x_{delta_j,t}) + e_t.

    With ``standardize_data`` the columns of X and y are standardised first and
    the constants are kept in ``meta`` for prediction.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    if cfg.M != 1:
        cfg = cfg.with_(M=1)
    meta = {"kind": "ast", "P": cfg.P}
    if standardize_data:
        X, xm, xs = standardize(X)
        ys, ym, ysd = standardize(y[:, None])
        y = ys[:, 0]
        meta.update(x_mean=xm, x_sd=xs, y_mean=ym, y_sd=ysd)
    else:
        K = X.shape[1]
        meta.update(x_mean=np.zeros(K), x_sd=np.ones(K), y_mean=np.zeros(1), y_sd=np.ones(1))
    return run_chain(y, X, cfg, settings, family="uni", init=init, meta=meta)


def run_chain_vast(Y, cfg: ModelConfig, settings: ChainSettings, *, standardize_data=True, names=None,
                   init=None) -> Posterior:
    """Fit the VAST model with covariates x_t = (y_{t-1}', ..., y_{t-P}')'.

    ``Y`` is standardised column-wise first (unless disabled); everything in
    the returned draws is in standardised units, with constants in ``meta``.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    M = Y.shape[1]
    if cfg.M != M:
        cfg = cfg.with_(M=M)
    if standardize_data:
        Ys, ym, ysd = standardize(Y)
    else:
        Ys, ym, ysd = Y, np.zeros(M), np.ones(M)
    X, Yt = build_lag_matrix(Ys, cfg.P)
    meta = {
        "kind": "vast", "P": cfg.P, "y_mean": ym, "y_sd": ysd,
        "names": list(names) if names is not None else [f"y{i + 1}" for i in range(M)],
    }
    return run_chain(Yt, X, cfg, settings, family="multi", init=init, meta=meta)


def variable_relevance(draws: Posterior, K: int | None = None) -> np.ndarray:
    """Posterior mean number of learners selecting each covariate.

    Scores sum to J over all covariates.
    """
    K = draws.K if K is None else K
    counts = np.zeros(K)
    for row in draws.delta:
        counts += np.bincount(row, minlength=K)[:K]
    return counts / len(draws)
