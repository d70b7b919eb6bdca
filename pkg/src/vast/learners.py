"""Logistic transitions, base-learner evaluation and the generated-regressor matrix."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .core import BaseLearnerParams


def logistic(z):
    """Overflow-free logistic 1/(1+exp(-z)); only exp of nonpositive arguments is taken."""
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logistic_transition(x_tilde, nu, mu):
    """S = 1 / (1 + exp(-nu * (x_tilde - mu))), elementwise.

    ``nu = 0`` gives 1/2 everywhere. S tends to 1 as ``x_tilde`` grows.
    """
    x_tilde = np.asarray(x_tilde, dtype=float)
    if not (np.all(np.isfinite(x_tilde)) and np.all(np.isfinite(nu)) and np.all(np.isfinite(mu))):
        raise ValueError("logistic_transition: non-finite input")
    if np.any(np.asarray(nu) < 0):
        raise ValueError("logistic_transition: nu must be nonnegative")
    out = logistic(np.multiply(nu, x_tilde - mu))
    return out if out.ndim else float(out)


def eval_base_learner(params: BaseLearnerParams, x_tilde) -> np.ndarray:
    """S * beta0 + (1 - S) * beta1 for scalar or vector ``x_tilde``.

    Returns shape (M,) for scalar input, (n, M) for a length-n vector.
    """
    S = np.asarray(logistic_transition(x_tilde, params.nu, params.mu))
    return S[..., None] * params.beta0 + (1.0 - S[..., None]) * params.beta1


class TransitionMatrix:
    """The T x 2J generated regressors with row t = (S_1t, 1-S_1t, ..., S_Jt, 1-S_Jt).

    Stored column-major so each learner's column pair is one contiguous block.
    Not safe for concurrent mutation.
    """

    def __init__(self, Z: np.ndarray):
        Z = np.asfortranarray(Z, dtype=float)
        if Z.ndim != 2 or Z.shape[1] % 2:
            raise ValueError(f"Z must be T x 2J, got shape {Z.shape}")
        self.Z = Z

    @property
    def T(self) -> int:
        return self.Z.shape[0]

    @property
    def J(self) -> int:
        return self.Z.shape[1] // 2

    def columns(self, j: int) -> np.ndarray:
        """The T x 2 block of learner ``j`` (a view)."""
        self._check(j)
        return self.Z[:, 2 * j:2 * j + 2]

    def _check(self, j: int):
        if not 0 <= j < self.J:
            raise IndexError(f"learner index {j} outside 0..{self.J - 1}")

    def copy(self) -> TransitionMatrix:
        return TransitionMatrix(self.Z.copy(order="F"))

    def set_columns(self, j: int, S: np.ndarray) -> None:
        self._check(j)
        self.Z[:, 2 * j] = S
        self.Z[:, 2 * j + 1] = 1.0 - S


def _check_X(X, learners):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"X must be T x K, got shape {X.shape}")
    K = X.shape[1]
    for j, p in enumerate(learners):
        if not 0 <= p.delta < K:
            raise ValueError(f"learner {j}: delta={p.delta} does not index a column of X (K={K})")
    return X


def build_Z(learners: Sequence[BaseLearnerParams], X) -> TransitionMatrix:
    X = _check_X(X, learners)
    Z = np.empty((X.shape[0], 2 * len(learners)), order="F")
    tm = TransitionMatrix(Z)
    for j, p in enumerate(learners):
        tm.set_columns(j, logistic_transition(X[:, p.delta], p.nu, p.mu))
    return tm


def refresh_learner_columns(Z: TransitionMatrix, j: int, params: BaseLearnerParams, X) -> TransitionMatrix:
    """Recompute learner ``j``'s column pair in place and return ``Z``."""
    Z._check(j)
    X = _check_X(X, [params])
    if X.shape[0] != Z.T:
        raise ValueError(f"X has {X.shape[0]} rows, Z has {Z.T}")
    Z.set_columns(j, logistic_transition(X[:, params.delta], params.nu, params.mu))
    return Z


def learner_fit(S: np.ndarray, beta0: np.ndarray, beta1: np.ndarray) -> np.ndarray:
    """T x M fit S*beta0' + (1-S)*beta1' of one learner."""
    return np.outer(S, beta0) + np.outer(1.0 - S, beta1)
