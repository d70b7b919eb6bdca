"""Closed-form conjugate algebra for the AST/VAST location coefficients.

Priors (lambda = J/phi)::

    beta | sigma2 ~ N(0, sigma2 / lambda * I)      sigma2 ~ IG(a_sigma, b_sigma)   [shape, rate]
    vec(B) | Sigma ~ N(0, Sigma (x) I / lambda)    Sigma ~ IW(a_Sigma, S_Sigma)

The collapsed marginal likelihoods are returned up to a constant that does not
depend on the generated regressors unless ``normalized=True``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln, multigammaln

from .core import ModelConfig, NumericalError
from .learners import TransitionMatrix

LOG_2PI = np.log(2.0 * np.pi)


def _as_array(Z) -> np.ndarray:
    return Z.Z if isinstance(Z, TransitionMatrix) else np.asarray(Z, dtype=float)


def _chol(A: np.ndarray, what: str) -> np.ndarray:
    try:
        return linalg.cholesky(A, lower=True)
    except linalg.LinAlgError as exc:
        eig = np.linalg.eigvalsh((A + A.T) / 2)
        raise NumericalError(
            f"{what} is not positive definite (min eigenvalue {eig.min():.3e}, max {eig.max():.3e})"
        ) from exc


def _logdet_chol(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


@dataclass(frozen=True)
class NigPosterior:
    beta_bar: np.ndarray
    V_bar: np.ndarray
    a_bar: float
    s_bar: float

    @property
    def sigma2_mean(self) -> float:
        return self.s_bar / (self.a_bar - 1.0)

    @property
    def sigma2_var(self) -> float:
        a = self.a_bar
        return self.s_bar**2 / ((a - 1.0) ** 2 * (a - 2.0))

    @property
    def beta_cov(self) -> np.ndarray:
        """Covariance of the marginal (Student-t) posterior of beta."""
        return self.s_bar / (self.a_bar - 1.0) * self.V_bar


@dataclass(frozen=True)
class MniwPosterior:
    B_bar: np.ndarray
    V_bar: np.ndarray
    a_bar: float
    S_bar: np.ndarray

    @property
    def beta_bar(self) -> np.ndarray:
        """vec(B_bar), equation by equation."""
        return self.B_bar.reshape(-1, order="F")

    @property
    def Sigma_mean(self) -> np.ndarray:
        M = self.S_bar.shape[0]
        return self.S_bar / (self.a_bar - M - 1.0)


def _precision_and_cross(Y: np.ndarray, Z: np.ndarray, lam: float):
    P = Z.T @ Z
    P[np.diag_indices_from(P)] += lam
    return P, Z.T @ Y


def nig_posterior(y, Z, cfg: ModelConfig) -> NigPosterior:
    """NIG posterior of (beta, sigma2) given the generated regressors.

    V_bar = (lambda I + Z'Z)^-1, beta_bar = V_bar Z'y, a_bar = a + T/2,
    s_bar = b + (y'y - beta_bar' V_bar^-1 beta_bar) / 2.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    Z = _as_array(Z)
    if Z.shape[0] != y.shape[0]:
        raise ValueError(f"y has {y.shape[0]} rows, Z has {Z.shape[0]}")
    lam = cfg.prior_precision
    P, zy = _precision_and_cross(y, Z, lam)
    L = _chol(P, "posterior precision")
    beta_bar = linalg.cho_solve((L, True), zy)
    V_bar = linalg.cho_solve((L, True), np.eye(P.shape[0]))
    V_bar = (V_bar + V_bar.T) / 2
    resid = float(y @ y - zy @ beta_bar)
    s_bar = cfg.b_sigma + 0.5 * max(resid, 0.0)
    return NigPosterior(beta_bar, V_bar, cfg.a_sigma + 0.5 * y.shape[0], s_bar)


def mniw_posterior(Y, Z, cfg: ModelConfig) -> MniwPosterior:
    """Matrix-normal/inverse-Wishart posterior of (B, Sigma) given Z."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    Z = _as_array(Z)
    if Z.shape[0] != Y.shape[0]:
        raise ValueError(f"Y has {Y.shape[0]} rows, Z has {Z.shape[0]}")
    M = Y.shape[1]
    lam = cfg.prior_precision
    P, ZY = _precision_and_cross(Y, Z, lam)
    L = _chol(P, "posterior precision")
    B_bar = linalg.cho_solve((L, True), ZY)
    V_bar = linalg.cho_solve((L, True), np.eye(P.shape[0]))
    V_bar = (V_bar + V_bar.T) / 2
    S_bar = cfg.S_Sigma_scale * np.eye(M) + Y.T @ Y - ZY.T @ B_bar
    S_bar = (S_bar + S_bar.T) / 2
    _chol(S_bar, "posterior inverse-Wishart scale")
    return MniwPosterior(B_bar, V_bar, cfg.a_Sigma + Y.shape[0], S_bar)


def collapsed_logml_uni(R, z_cols, cfg: ModelConfig, *, a=None, b=None, normalized=False) -> float:
    """log p(R | z_cols) with the coefficients and sigma2 integrated out.

    ``a``/``b`` override the inverse-Gamma shape/rate (the sampler passes the
    values augmented by the other learners' coefficient prior).
    """
    R = np.asarray(R, dtype=float).reshape(-1)
    Zj = _as_array(z_cols)
    a = cfg.a_sigma if a is None else a
    b = cfg.b_sigma if b is None else b
    T, c = Zj.shape
    lam = cfg.prior_precision
    P, zr = _precision_and_cross(R, Zj, lam)
    L = _chol(P, "learner posterior precision")
    beta = linalg.cho_solve((L, True), zr)
    rss = max(float(R @ R - zr @ beta), 0.0)
    val = 0.5 * (-_logdet_chol(L) + c * np.log(lam)) - (a + 0.5 * T) * np.log(b + 0.5 * rss)
    if normalized:
        val += a * np.log(b) - gammaln(a) + gammaln(a + 0.5 * T) - 0.5 * T * LOG_2PI
    return float(val)


def collapsed_logml_multi(R, z_cols, cfg: ModelConfig, *, a=None, S=None, normalized=False) -> float:
    """log p(R | z_cols) for the multivariate model (Sigma and B integrated out).

    (M/2) log(|V_bar|/|V_prior|) - ((T+a)/2) log|S + R'R - B_bar' V_bar^-1 B_bar|.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    Zj = _as_array(z_cols)
    T, M = R.shape
    c = Zj.shape[1]
    a = cfg.a_Sigma if a is None else a
    S = cfg.S_Sigma_scale * np.eye(M) if S is None else np.asarray(S, dtype=float)
    lam = cfg.prior_precision
    P, ZR = _precision_and_cross(R, Zj, lam)
    L = _chol(P, "learner posterior precision")
    B = linalg.cho_solve((L, True), ZR)
    Sbar = S + R.T @ R - ZR.T @ B
    Ls = _chol((Sbar + Sbar.T) / 2, "collapsed inverse-Wishart scale")
    val = 0.5 * M * (-_logdet_chol(L) + c * np.log(lam)) - 0.5 * (T + a) * _logdet_chol(Ls)
    if normalized:
        val += (
            -0.5 * T * M * np.log(np.pi)
            + multigammaln(0.5 * (a + T), M) - multigammaln(0.5 * a, M)
            + 0.5 * a * _logdet_chol(_chol(S, "prior scale"))
        )
    return float(val)


# -- batched forms used inside the sampler ------------------------------------


def _pair_stats(S: np.ndarray):
    """Entries of Z_k'Z_k for Z_k = [s_k, 1-s_k], for every column s_k of S."""
    T = S.shape[0]
    s1 = S.sum(axis=0)
    s2 = np.einsum("tk,tk->k", S, S)
    return s2, s1 - s2, T - 2.0 * s1 + s2


def logml_candidates_uni(R: np.ndarray, S: np.ndarray, lam: float, a: float, b: float) -> np.ndarray:
    """collapsed_logml_uni for each column of S (T x K) via 2x2 closed forms."""
    T = S.shape[0]
    z00, z01, z11 = _pair_stats(S)
    p00, p01, p11 = z00 + lam, z01, z11 + lam
    det = p00 * p11 - p01 * p01
    c0 = S.T @ R
    c1 = R.sum() - c0
    quad = (p11 * c0 * c0 - 2.0 * p01 * c0 * c1 + p00 * c1 * c1) / det
    rss = np.maximum(R @ R - quad, 0.0)
    return 0.5 * (-np.log(det) + 2.0 * np.log(lam)) - (a + 0.5 * T) * np.log(b + 0.5 * rss)


def logml_candidates_multi(R: np.ndarray, S: np.ndarray, lam: float, a: float, Sprior: np.ndarray) -> np.ndarray:
    """collapsed_logml_multi for each column of S (T x K).

    Uses |A - C'V C| = |A| |P - W| / |P| with A = Sprior + R'R, P = lam I + Z'Z and
    W = C A^-1 C' (2 x 2 per candidate), so only one M x M factorisation is needed.
    """
    T, K = S.shape
    M = R.shape[1]
    A = Sprior + R.T @ R
    LA = _chol((A + A.T) / 2, "Sprior + R'R")
    z00, z01, z11 = _pair_stats(S)
    p00, p01, p11 = z00 + lam, z01, z11 + lam
    logdetP = np.log(p00 * p11 - p01 * p01)
    rsum = R.sum(axis=0)
    if T * K * M + M * M * K <= M * T * T + T * T * K:
        C0 = S.T @ R
        E0 = linalg.solve_triangular(LA, C0.T, lower=True, check_finite=False)
        e1 = linalg.solve_triangular(LA, rsum, lower=True, check_finite=False)
        E1 = e1[:, None] - E0
        w00 = np.einsum("mk,mk->k", E0, E0)
        w01 = np.einsum("mk,mk->k", E0, E1)
        w11 = np.einsum("mk,mk->k", E1, E1)
    else:
        D = linalg.solve_triangular(LA, R.T, lower=True, check_finite=False)
        F = D.T @ D
        f1 = F.sum(axis=1)
        FS = F @ S
        sFs = np.einsum("tk,tk->k", S, FS)
        sF1 = S.T @ f1
        w00 = sFs
        w01 = sF1 - sFs
        w11 = f1.sum() - 2.0 * sF1 + sFs
    q00, q01, q11 = p00 - w00, p01 - w01, p11 - w11
    detQ = q00 * q11 - q01 * q01
    with np.errstate(invalid="ignore", divide="ignore"):
        logdetQ = np.where((detQ > 0) & (q00 > 0), np.log(detQ), -np.inf)
    logdetS = _logdet_chol(LA) + logdetQ - logdetP
    return 0.5 * M * (-logdetP + 2.0 * np.log(lam)) - 0.5 * (T + a) * logdetS


# -- samplers -------------------------------------------------------------------


def sample_invgamma(shape: float, rate: float, rng: np.random.Generator) -> float:
    return rate / rng.gamma(shape)


def invwishart_factor(df: float, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Return G with G G' ~ IW(df, scale), via the Bartlett decomposition."""
    M = scale.shape[0]
    L = _chol((scale + scale.T) / 2, "inverse-Wishart scale")
    A = np.zeros((M, M))
    A[np.diag_indices(M)] = np.sqrt(rng.chisquare(df - np.arange(M)))
    rows, cols = np.tril_indices(M, -1)
    A[rows, cols] = rng.standard_normal(rows.size)
    Ainv = linalg.solve_triangular(A, np.eye(M), lower=True)
    return L @ Ainv.T


def sample_invwishart(df: float, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    G = invwishart_factor(df, scale, rng)
    out = G @ G.T
    return (out + out.T) / 2


def sample_matrix_normal(mean: np.ndarray, row_factor: np.ndarray, col_factor: np.ndarray,
                         rng: np.random.Generator) -> np.ndarray:
    """mean + row_factor @ G @ col_factor', so vec has covariance (col col') (x) (row row')."""
    G = rng.standard_normal(mean.shape)
    return mean + row_factor @ G @ col_factor.T


def sample_mniw_coefficients(B_bar: np.ndarray, prec_chol: np.ndarray, Sigma_chol: np.ndarray,
                             rng: np.random.Generator) -> np.ndarray:
    """Draw B with vec(B) ~ N(vec(B_bar), Sigma (x) V_bar) without forming the Kronecker product.

    ``prec_chol`` is the lower Cholesky factor of V_bar^-1 and ``Sigma_chol``
    any factor G with G G' = Sigma. Cost O(c^2 M) rather than O(c^3 M^3).
    """
    N = rng.standard_normal(B_bar.shape)
    return B_bar + linalg.solve_triangular(prec_chol.T, N, lower=False) @ Sigma_chol.T
