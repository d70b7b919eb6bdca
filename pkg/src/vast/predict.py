"""Predictive simulation and forecast evaluation.

All simulation happens in the model's standardised units and is mapped back
to data units with the constants stored in the draw metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .core import ConfigError, DataError, ModelConfig, Posterior
from .data import DgpSpec, lag_vector, simulate_dgp
from .learners import logistic

QUANTILES = (0.05, 0.16, 0.5, 0.84, 0.95)


@dataclass
class PredictiveDraws:
    """Simulated predictive paths.

    ``paths`` has shape (H, M, n). Axis 0 indexes horizons 1..H for
    multi-step simulation and forecast targets for one-step AST prediction.
    """

    paths: np.ndarray
    names: list | None = None
    cond_means: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.paths = np.asarray(self.paths, dtype=float)
        if self.paths.ndim != 3 or self.paths.shape[2] < 1:
            raise ValueError(f"paths must be H x M x n with n >= 1, got shape {self.paths.shape}")

    @property
    def H(self) -> int:
        return self.paths.shape[0]

    @property
    def M(self) -> int:
        return self.paths.shape[1]

    @property
    def n_draws(self) -> int:
        return self.paths.shape[2]

    def mean(self) -> np.ndarray:
        return self.paths.mean(axis=2)

    def median(self) -> np.ndarray:
        return np.median(self.paths, axis=2)

    def variance(self) -> np.ndarray:
        """Cross-draw sample variance (n-1 convention; 0 for a single draw)."""
        if self.n_draws == 1:
            return np.zeros(self.paths.shape[:2])
        return self.paths.var(axis=2, ddof=1)

    def covariance(self, h: int = 0, subset=None) -> np.ndarray:
        block = self.paths[h] if subset is None else self.paths[h][list(subset)]
        return np.atleast_2d(np.cov(block))

    def quantiles(self, qs=QUANTILES) -> np.ndarray:
        """Array of shape (len(qs), H, M)."""
        return np.quantile(self.paths, qs, axis=2)

    def summary(self, qs=QUANTILES) -> pd.DataFrame:
        """Long table with one row per (horizon, variable)."""
        names = self.names or [f"y{i + 1}" for i in range(self.M)]
        q = self.quantiles(qs)
        rows = []
        mean, med, var = self.mean(), self.median(), self.variance()
        for h in range(self.H):
            for m in range(self.M):
                row = {"horizon": h + 1, "variable": names[m], "mean": mean[h, m],
                       "median": med[h, m], "variance": var[h, m]}
                row.update({f"q{qq:g}": q[i, h, m] for i, qq in enumerate(qs)})
                rows.append(row)
        return pd.DataFrame(rows)


# -- simulation -------------------------------------------------------------------


def conditional_mean(post: Posterior, x: np.ndarray) -> np.ndarray:
    """Sum of learner fits for covariate vectors ``x`` of shape (D, n, K).

    Returns (D, n, M). Draw d's learners are applied to ``x[d]``.
    """
    D, n, _ = x.shape
    idx = np.broadcast_to(post.delta[:, None, :], (D, n, post.J))
    xs = np.take_along_axis(x, idx, axis=2)
    S = logistic(post.nu[:, None, :] * (xs - post.mu[:, None, :]))
    return S @ (post.beta0 - post.beta1) + post.beta1.sum(axis=1)[:, None, :]


def _sigma_factors(post: Posterior, zero_sigma: bool) -> np.ndarray:
    if zero_sigma:
        return np.zeros_like(post.Sigma)
    try:
        return np.linalg.cholesky(post.Sigma)
    except np.linalg.LinAlgError:
        raise ConfigError("a retained Sigma draw is not positive definite") from None


def simulate_paths(post: Posterior, x0: np.ndarray, eps: np.ndarray, *, return_means=False):
    """Feed the learner sum through the lag buffer.

    ``x0`` (D, n, K) holds the standardised lag vector at the forecast origin
    and ``eps`` (H, D, n, M) the reduced-form innovations. Returns the (H, D,
    n, M) simulated values, plus the conditional means when asked.
    """
    H = eps.shape[0]
    M = post.M
    x = np.array(x0, dtype=float)
    K = x.shape[2]
    out = np.empty(eps.shape)
    means = np.empty(eps.shape) if return_means else None
    for h in range(H):
        m = conditional_mean(post, x)
        out[h] = m + eps[h]
        if return_means:
            means[h] = m
        if h + 1 < H:
            x = np.concatenate([out[h], x[:, :, :K - M]], axis=2)
    return (out, means) if return_means else out


def _lag_covariates(post: Posterior):
    P = int(post.meta.get("P", 1))
    if post.meta.get("kind") == "ast" or post.K != post.M * P:
        raise ConfigError(
            "multi-step simulation needs covariates that are lags of the response "
            f"(K = M P); got K={post.K}, M={post.M}, P={P}. Use predict_ast for one-step AST forecasts."
        )
    return P


def _scale(post: Posterior):
    M = post.M
    ym = np.asarray(post.meta.get("y_mean", np.zeros(M)), dtype=float).reshape(M)
    ys = np.asarray(post.meta.get("y_sd", np.ones(M)), dtype=float).reshape(M)
    return ym, ys


def simulate_predictive(post: Posterior, history, H: int, n_paths_per_draw: int = 1, *, seed=0,
                        zero_sigma=False, return_means=False) -> PredictiveDraws:
    """Draw from the h-step predictive distribution by iterating the model forward.

    ``history`` holds at least the last P observations (data units, oldest
    first). At h = 1 the mean is the learner sum at the known lag vector;
    each simulated value is fed back into the lag vector for the next step.
    """
    if int(H) != H or H < 1:
        raise ConfigError(f"horizon must be a positive integer, got {H}")
    if n_paths_per_draw < 1:
        raise ConfigError("n_paths_per_draw must be at least 1")
    P = _lag_covariates(post)
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[:, None] if post.M == 1 else history[None, :]
    if history.shape[1] != post.M:
        raise DataError(f"history has {history.shape[1]} series, the model has {post.M}")
    ym, ys = _scale(post)
    x0 = lag_vector((history - ym) / ys, P)
    D, n, M = len(post), n_paths_per_draw, post.M
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((H, D, n, M))
    L = _sigma_factors(post, zero_sigma)
    eps = np.einsum("dmk,hdnk->hdnm", L, z)
    res = simulate_paths(post, np.broadcast_to(x0, (D, n, x0.size)), eps, return_means=return_means)
    sims, means = res if return_means else (res, None)
    paths = (sims * ys + ym).reshape(H, D * n, M).transpose(0, 2, 1)
    if return_means:
        means = (means * ys + ym).reshape(H, D * n, M).transpose(0, 2, 1)
    return PredictiveDraws(paths, names=post.meta.get("names"), cond_means=means)


def predict_ast(post: Posterior, X_new, n_paths_per_draw: int = 1, *, seed=0, zero_sigma=False) -> PredictiveDraws:
    """One-step predictive draws of an AST fit for known covariate rows ``X_new``.

    Returns draws with axis 0 indexing the rows of ``X_new``, in data units.
    """
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    K = post.K
    if X_new.shape[1] != K:
        raise DataError(f"X_new has {X_new.shape[1]} columns, the model was fitted with {K}")
    xm = np.asarray(post.meta.get("x_mean", np.zeros(K)), dtype=float)
    xs = np.asarray(post.meta.get("x_sd", np.ones(K)), dtype=float)
    ym, ys = _scale(post)
    Xs = (X_new - xm) / xs
    D, n = len(post), n_paths_per_draw
    m = conditional_mean(post, np.broadcast_to(Xs, (D,) + Xs.shape))[:, :, 0]  # (D, N)
    sd = np.zeros(D) if zero_sigma else np.sqrt(post.Sigma[:, 0, 0])
    z = np.random.default_rng(seed).standard_normal((D, n, Xs.shape[0]))
    draws = m[:, None, :] + sd[:, None, None] * z
    paths = (draws * ys[0] + ym[0]).reshape(D * n, -1).T[:, None, :]
    return PredictiveDraws(paths)


# -- metrics ----------------------------------------------------------------------


def rmse(actuals, forecasts) -> float:
    """sqrt(mean((y - yhat)^2)); the point forecast is the predictive median."""
    a = np.asarray(actuals, dtype=float).ravel()
    f = np.asarray(forecasts, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("rmse of an empty sample")
    if a.shape != f.shape:
        raise ValueError(f"length mismatch: {a.size} actuals, {f.size} forecasts")
    return float(np.sqrt(np.mean((a - f) ** 2)))


def lpl_gaussian(actuals, means, variances) -> float:
    """Average Gaussian log density of the actuals at the plug-in moments."""
    a = np.asarray(actuals, dtype=float).ravel()
    m = np.asarray(means, dtype=float).ravel()
    v = np.asarray(variances, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("lpl of an empty sample")
    if not (a.shape == m.shape == v.shape):
        raise ValueError("actuals, means and variances must have equal length")
    if np.any(~(v > 0)):
        raise ValueError("predictive variances must be positive")
    return float(np.mean(-0.5 * (np.log(2 * np.pi * v) + (a - m) ** 2 / v)))


def lpl_joint(actuals, means, covs) -> float:
    """Average multivariate Gaussian log density; ``covs`` has shape (n, m, m)."""
    a = np.atleast_2d(np.asarray(actuals, dtype=float))
    m = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float).reshape(a.shape[0], a.shape[1], a.shape[1])
    total = 0.0
    for y, mu, C in zip(a, m, covs):
        try:
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            raise ValueError("predictive covariance is not positive definite") from None
        r = np.linalg.solve(L, y - mu)
        total += -0.5 * (len(y) * math.log(2 * math.pi) + 2 * np.sum(np.log(np.diag(L))) + r @ r)
    return total / a.shape[0]


def evaluate(pred: PredictiveDraws, actuals, h: int = 0) -> dict:
    """RMSE and LPL at horizon index ``h`` (or every target row for AST draws)."""
    actuals = np.asarray(actuals, dtype=float)
    med = pred.median()
    var = pred.variance()
    if pred.M == 1 and actuals.ndim == 1 and actuals.size == pred.H:
        return {"rmse": rmse(actuals, med[:, 0]), "lpl": lpl_gaussian(actuals, med[:, 0], var[:, 0])}
    actuals = actuals.reshape(pred.M)
    return {"rmse": rmse(actuals, med[h]), "lpl": lpl_gaussian(actuals, med[h], var[h])}


# -- simulation study -------------------------------------------------------------

VARIANTS = {
    "estimate-both": {},
    "fix-mu": {"fix_mu_to_mean": True},
    "fix-nu": {"fix_nu": 10.0},
    "fix-both": {"fix_nu": 10.0, "fix_mu_to_mean": True},
}


@dataclass
class StudyResult:
    """Per-replication metrics with shape (reps, variants, J grid)."""

    variants: list
    J_grid: list
    rmse: np.ndarray
    lpl: np.ndarray
    accept: dict = field(default_factory=dict)
    relevance: list = field(default_factory=list)

    def mean_rmse(self) -> pd.DataFrame:
        return pd.DataFrame(self.rmse.mean(axis=0), index=self.variants, columns=self.J_grid)

    def mean_lpl(self) -> pd.DataFrame:
        return pd.DataFrame(self.lpl.mean(axis=0), index=self.variants, columns=self.J_grid)

    def relative(self, baseline: str = "estimate-both") -> tuple[pd.DataFrame, pd.DataFrame]:
        """RMSE ratios and LPL differences of the replication averages against ``baseline``."""
        if baseline not in self.variants:
            raise ConfigError(f"baseline {baseline!r} not among {self.variants}")
        r, l = self.mean_rmse(), self.mean_lpl()
        return r / r.loc[baseline], l - l.loc[baseline]

    def table(self, baseline: str = "estimate-both") -> pd.DataFrame:
        ratio, diff = self.relative(baseline)
        ratio.index = [f"rmse:{v}" for v in ratio.index]
        diff.index = [f"lpl:{v}" for v in diff.index]
        return pd.concat([ratio, diff])


def _study_replication(r, J_grid, variants, settings, seed, base_cfg, dgp, n_train):
    from .sampler import ChainSettings, run_chain_ast, variable_relevance

    real = simulate_dgp(DgpSpec(**{**dgp.__dict__, "seed": seed + r}))
    ytr, Xtr = real.y[:n_train], real.X[:n_train]
    yte, Xte = real.y[n_train:], real.X[n_train:]
    R = np.empty((len(variants), len(J_grid)))
    Lp = np.empty_like(R)
    accept, relevance = {}, []
    for vi, v in enumerate(variants):
        for ji, J in enumerate(J_grid):
            cfg = base_cfg.with_(J=J, M=1, **VARIANTS[v])
            st = ChainSettings(**{**settings.__dict__, "seed": settings.seed + r})
            post = run_chain_ast(ytr, Xtr, cfg, st)
            m = evaluate(predict_ast(post, Xte, seed=st.seed), yte)
            R[vi, ji], Lp[vi, ji] = m["rmse"], m["lpl"]
            accept[(r, v, J)] = post.diagnostics.accept_rate
            if v == "estimate-both":
                relevance.append((r, J, variable_relevance(post)))
    return R, Lp, accept, relevance


def monte_carlo_study(reps: int = 10, J_grid=(1, 5, 10, 15), variants=tuple(VARIANTS), *, settings=None,
                      seed: int = 0, base_cfg: ModelConfig | None = None, dgp: DgpSpec | None = None,
                      n_train: int | None = None, workers: int = 1) -> StudyResult:
    """Simulate, fit once on the first half, and score one-step forecasts on the second.

    Replication r uses DGP seed ``seed + r`` and chain seed ``settings.seed + r``
    for every variant, so variants differ only by their restrictions. Results
    do not depend on ``workers``.
    """
    from .sampler import ChainSettings

    settings = settings or ChainSettings()
    base_cfg = base_cfg or ModelConfig()
    dgp = dgp or DgpSpec()
    variants = list(variants)
    J_grid = [int(J) for J in J_grid]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {list(VARIANTS)}")
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    n_train = dgp.T // 2 if n_train is None else n_train
    if not 0 < n_train < dgp.T:
        raise ConfigError(f"split exhausts the data: n_train={n_train}, T={dgp.T}")
    args = (J_grid, variants, settings, seed, base_cfg, dgp, n_train)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_study_replication, range(reps), *[[a] * reps for a in args]))
    else:
        parts = [_study_replication(r, *args) for r in range(reps)]
    accept, relevance = {}, []
    for part in parts:
        accept.update(part[2])
        relevance.extend(part[3])
    return StudyResult(variants, J_grid, np.stack([p[0] for p in parts]), np.stack([p[1] for p in parts]),
                       accept, relevance)


# -- recursive design -------------------------------------------------------------


@dataclass
class RecursiveResult:
    origins: list
    medians: np.ndarray  # (n_origins, H, M)
    variances: np.ndarray
    actuals: np.ndarray  # NaN where the target lies beyond the sample
    joint_lpl: np.ndarray | None = None

    def metrics(self, h: int = 0) -> pd.DataFrame:
        ok = np.all(np.isfinite(self.actuals[:, h]), axis=1)
        if not ok.any():
            raise DataError("no realised targets inside the evaluation window")
        a, m, v = self.actuals[ok, h], self.medians[ok, h], self.variances[ok, h]
        M = a.shape[1]
        return pd.DataFrame({
            "rmse": [rmse(a[:, i], m[:, i]) for i in range(M)],
            "lpl": [lpl_gaussian(a[:, i], m[:, i], v[:, i]) for i in range(M)],
        })


def recursive_forecast(Y, cfg: ModelConfig, settings, start: int, *, H: int = 1, end: int | None = None,
                       n_paths_per_draw: int = 1, focus=None, names=None, progress=None) -> RecursiveResult:
    """Expanding-window forecasts: fit on Y[:t], forecast t..t+H-1, then add one period.

    ``start`` is the first forecast origin (number of training rows).
    ``focus`` selects series for the joint LPL at h = 1.
    """
    from .sampler import ChainSettings, run_chain_vast

    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    T, M = Y.shape
    end = T if end is None else end
    if not cfg.P < start < end <= T:
        raise ConfigError(f"split exhausts data: need P < start < end <= T, got {start}, {end}, T={T}")
    origins = list(range(start, end))
    med = np.empty((len(origins), H, M))
    var = np.empty_like(med)
    act = np.full_like(med, np.nan)
    jl = np.full(len(origins), np.nan) if focus is not None else None
    for i, t in enumerate(origins):
        st = ChainSettings(**{**settings.__dict__, "seed": settings.seed + i})
        post = run_chain_vast(Y[:t], cfg, st, names=names)
        pred = simulate_predictive(post, Y[:t], H, n_paths_per_draw, seed=st.seed)
        med[i], var[i] = pred.median(), pred.variance()
        k = min(H, T - t)
        act[i, :k] = Y[t:t + k]
        if focus is not None and t < T:
            f = list(focus)
            C = pred.covariance(0, f)
            jl[i] = lpl_joint(Y[t, f][None], med[i, 0, f][None], C[None])
        if progress is not None:
            progress(i, t)
    return RecursiveResult(origins, med, var, act, jl)
