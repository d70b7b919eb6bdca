"""Recursive identification and generalised impulse responses.

A GIRF for draw d and historical state t is the difference between a path
whose shocked structural innovation is ``w`` on impact (and zero afterwards)
and a baseline path where that innovation is zero throughout. All other
structural innovations are common to both paths, so ``w = 0`` gives an
identically zero response.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .core import CLASSES, ConfigError, DataError, NumericalError, Posterior
from .data import build_lag_matrix
from .predict import QUANTILES, _lag_covariates, _scale, simulate_paths


@dataclass(frozen=True)
class GirfSpec:
    """Shock definition. ``shock_index`` is the position of the shocked
    variable in the model's (unpermuted) variable order; ``w`` is the
    signed shock size in standard deviations; responses cover horizons 0..H."""

    shock_index: int
    w: float = 1.0
    H: int = 20
    n_shock_draws: int = 20
    state_subsample: int = 1
    seed: int = 0

    def __post_init__(self):
        if int(self.H) != self.H or self.H < 1:
            raise ConfigError(f"H must be a positive integer, got {self.H}")
        if self.n_shock_draws < 1:
            raise ConfigError("n_shock_draws must be at least 1")
        if self.state_subsample < 1:
            raise ConfigError("state_subsample must be at least 1")
        if not np.isfinite(self.w):
            raise ConfigError("shock size must be finite")


@dataclass(frozen=True)
class VariableOrdering:
    """``order[k]`` is the variable placed k-th in the recursive scheme."""

    order: tuple

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(order))):
            raise ConfigError(f"ordering {order} is not a permutation of 0..{len(order) - 1}")
        object.__setattr__(self, "order", order)

    @property
    def M(self) -> int:
        return len(self.order)

    def position(self, var: int) -> int:
        return self.order.index(int(var))

    def matrix(self) -> np.ndarray:
        """Permutation matrix P with (P y)_k = y_{order[k]}."""
        P = np.zeros((self.M, self.M))
        P[np.arange(self.M), self.order] = 1.0
        return P


def ordering_from_classes(classes, shock_index: int, names=None) -> VariableOrdering:
    """Slow variables, then policy, then the shock variable, then fast ones.

    Within a class the original order is kept. The shock variable may be
    classed ``policy`` (placed last among them) or ``fast`` (placed first).
    """
    classes = [str(c).lower() for c in classes]
    names = names or [f"variable {i}" for i in range(len(classes))]
    bad = [n for n, c in zip(names, classes) if c not in CLASSES]
    if bad:
        raise ConfigError(f"unclassed variables: {', '.join(bad)}")
    if not 0 <= shock_index < len(classes):
        raise ConfigError(f"shock index {shock_index} outside 0..{len(classes) - 1}")
    if classes[shock_index] == "slow":
        raise ConfigError(
            f"shock variable {names[shock_index]} is classed 'slow' but must be ordered after the "
            "slow and policy blocks; reclass it as 'policy' or 'fast'"
        )
    group = {c: [i for i, ci in enumerate(classes) if ci == c and i != shock_index] for c in CLASSES}
    return VariableOrdering(tuple(group["slow"] + group["policy"] + [shock_index] + group["fast"]))


def identify_recursive(Sigma, ordering: VariableOrdering | None = None) -> np.ndarray:
    """Lower Cholesky factor L of P Sigma P' (identity ordering when None)."""
    Sigma = np.asarray(Sigma, dtype=float)
    if ordering is not None:
        P = ordering.matrix()
        Sigma = P @ Sigma @ P.T
    try:
        return np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh((Sigma + Sigma.T) / 2)
        raise NumericalError(f"Cholesky failed, smallest eigenvalue {w.min():.3g}") from None


def impact_matrix(Sigma, ordering: VariableOrdering) -> np.ndarray:
    """P' L: reduced-form innovations in the original variable order are
    ``impact_matrix @ xi`` with ``xi`` indexed by ordered position."""
    return ordering.matrix().T @ identify_recursive(Sigma, ordering)


def _state_vectors(post: Posterior, Y) -> np.ndarray:
    """Standardised lag vectors at every date with a complete lag history."""
    P = _lag_covariates(post)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[1] != post.M:
        raise DataError(f"history has {Y.shape[1]} series, the model has {post.M}")
    ym, ys = _scale(post)
    Ys = (Y - ym) / ys
    if Ys.shape[0] < P:
        raise DataError(f"need at least P={P} observations of history")
    # append a dummy row so the final complete lag vector is included as well
    X, _ = build_lag_matrix(np.vstack([Ys, np.zeros((1, post.M))]), P)
    return X


def conditional_predictive(post: Posterior, d: int, x0, spec: GirfSpec, ordering: VariableOrdering, xi=None,
                           rng=None):
    """Shocked and baseline paths for draw ``d`` from the states in ``x0``.

    ``x0`` is (n, K) in standardised units; ``xi`` the (H+1, n, M) structural
    innovations (drawn from ``rng`` when omitted). Returns two (H+1, n, M)
    arrays in standardised units.
    """
    one = post.subset([d])
    B = impact_matrix(post.Sigma[d], ordering)
    pos = ordering.position(spec.shock_index)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n = x0.shape[0]
    if xi is None:
        rng = rng or np.random.default_rng(spec.seed)
        xi = rng.standard_normal((spec.H + 1, n, post.M))
    xi = np.array(xi, dtype=float)
    xi[:, :, pos] = 0.0
    u_base = xi @ B.T
    u_shock = u_base.copy()
    u_shock[0] += spec.w * B[:, pos]
    base = simulate_paths(one, x0[None], u_base[:, None])[:, 0]
    shocked = simulate_paths(one, x0[None], u_shock[:, None])[:, 0]
    return shocked, base


@dataclass
class GirfResult:
    """Posterior draws of the state-averaged response, shape (D, H+1, M), in data units."""

    responses: np.ndarray
    spec: GirfSpec
    names: list

    def quantiles(self, qs=QUANTILES) -> np.ndarray:
        return np.quantile(self.responses, qs, axis=0)

    def table(self, qs=QUANTILES) -> pd.DataFrame:
        q = self.quantiles(qs)
        rows = []
        for h in range(self.responses.shape[1]):
            for m, name in enumerate(self.names):
                row = {"horizon": h, "variable": name}
                row.update({f"q{qq:g}": q[i, h, m] for i, qq in enumerate(qs)})
                rows.append(row)
        return pd.DataFrame(rows)

    def write(self, path) -> Path:
        path = Path(path)
        self.table().to_csv(path, sep="\t", index=False, float_format="%.10g")
        return path


def girf(post: Posterior, Y, spec: GirfSpec, ordering: VariableOrdering | None = None, *,
         per_state=False) -> GirfResult | tuple[GirfResult, np.ndarray]:
    """Posterior distribution of the state-averaged generalised impulse response.

    ``Y`` is the observed panel in data units; every ``state_subsample``-th
    date with a full lag history is used as a starting state. Each (draw,
    state) pair owns the random stream ``(seed, draw, state)``. With
    ``per_state`` the (D, n_states, H+1, M) per-state responses are returned too.
    """
    M = post.M
    ordering = ordering or VariableOrdering(tuple(range(M)))
    if ordering.M != M:
        raise ConfigError(f"ordering has {ordering.M} variables, the model has {M}")
    if not 0 <= spec.shock_index < M:
        raise ConfigError(f"shock index {spec.shock_index} outside 0..{M - 1}")
    states = _state_vectors(post, Y)
    idx = np.arange(0, states.shape[0], spec.state_subsample)
    if idx.size == 0:
        raise DataError("empty state set")
    x0 = np.repeat(states[idx], spec.n_shock_draws, axis=0)
    _, ys = _scale(post)
    R, S = spec.n_shock_draws, idx.size
    D = len(post)
    out = np.empty((D, spec.H + 1, M))
    every = np.empty((D, S, spec.H + 1, M)) if per_state else None
    for d in range(D):
        xi = np.concatenate(
            [np.random.default_rng([spec.seed, d, int(t)]).standard_normal((spec.H + 1, R, M)) for t in idx],
            axis=1,
        )
        shocked, base = conditional_predictive(post, d, x0, spec, ordering, xi=xi)
        diff = ((shocked - base) * ys).reshape(spec.H + 1, S, R, M).mean(axis=2)
        out[d] = diff.mean(axis=1)
        if per_state:
            every[d] = diff.transpose(1, 0, 2)
    names = post.meta.get("names") or [f"y{i + 1}" for i in range(M)]
    res = GirfResult(out, spec, list(names))
    return (res, every) if per_state else res
