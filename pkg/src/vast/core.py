"""Shared domain types, model configuration and the posterior-draw container.

The draw-file layout (version 1, all integers and floats little-endian)::

    magic      4 bytes   b"VAST"
    version    uint16    1
    J, M, K    uint32 x3 learners, series, covariates
    n_save     uint32    number of stored draws
    meta_len   uint32    length of the JSON metadata block
    meta       meta_len bytes of UTF-8 JSON (model kind, lag order, names,
               standardisation constants, resolved configuration)
    draws      n_save records, each:
                 J x (nu f64, mu f64, delta uint32, beta0 f64[M], beta1 f64[M])
                 Sigma lower triangle, row-major, f64[M(M+1)/2]
                 loglik f64

``delta`` is stored 0-based.
"""

from __future__ import annotations

import json
import struct
import warnings
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
import pandas as pd

MAGIC = b"VAST"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sH4I")
_META_LEN = struct.Struct("<I")

CLASSES = ("slow", "policy", "fast")


class VastError(Exception):
    """Base class for library errors."""


class ConfigError(VastError, ValueError):
    pass


class DataError(VastError, ValueError):
    pass


class NumericalError(VastError, ArithmeticError):
    pass


class DrawFileError(VastError, ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Model dimensions and prior hyperparameters.

    ``a_Sigma=None`` resolves to ``M`` (inverse-Wishart degrees of freedom).
    ``fix_nu``/``fix_mu``/``fix_mu_to_mean``/``fix_delta`` switch off the
    corresponding learner updates.
    """

    J: int = 10
    P: int = 1
    M: int = 1
    phi: float = 1.0
    a_sigma: float = 0.01
    b_sigma: float = 0.01
    a_nu: float = 0.01
    b_nu: float = 0.01
    sigma2_mu: float = 10.0
    a_Sigma: float | None = None
    S_Sigma_scale: float = 0.01
    fix_nu: float | None = None
    fix_mu: float | None = None
    fix_mu_to_mean: bool = False
    fix_delta: bool = False

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 1:
            raise ConfigError(f"J must be a positive integer, got {self.J}")
        if int(self.P) != self.P or self.P < 1:
            raise ConfigError(f"P must be a positive integer, got {self.P}")
        if int(self.M) != self.M or self.M < 1:
            raise ConfigError(f"M must be a positive integer, got {self.M}")
        for name in ("phi", "a_sigma", "b_sigma", "a_nu", "b_nu", "sigma2_mu", "S_Sigma_scale"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive and finite, got {v}")
        if self.a_Sigma is None:
            object.__setattr__(self, "a_Sigma", float(self.M))
        if self.a_Sigma <= self.M - 1:
            raise ConfigError(f"a_Sigma must exceed M-1={self.M - 1}, got {self.a_Sigma}")
        if self.fix_nu is not None and not self.fix_nu > 0:
            raise ConfigError(f"fix_nu must be positive, got {self.fix_nu}")
        if self.fix_mu is not None and self.fix_mu_to_mean:
            raise ConfigError("fix_mu and fix_mu_to_mean are mutually exclusive")

    @property
    def prior_precision(self) -> float:
        """Diagonal of the inverse prior scale of the location coefficients, J/phi."""
        return self.J / self.phi

    @property
    def S_Sigma(self) -> np.ndarray:
        return self.S_Sigma_scale * np.eye(self.M)

    def with_(self, **changes) -> ModelConfig:
        if "M" in changes and "a_Sigma" not in changes:
            changes["a_Sigma"] = None
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BaseLearnerParams:
    """One base learner: transition speed, threshold, selected covariate
    (0-based) and the two location vectors."""

    nu: float
    mu: float
    delta: int
    beta0: np.ndarray
    beta1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta0", _frozen(np.atleast_1d(self.beta0)))
        object.__setattr__(self, "beta1", _frozen(np.atleast_1d(self.beta1)))
        object.__setattr__(self, "delta", int(self.delta))
        if self.beta0.shape != self.beta1.shape:
            raise ValueError("beta0 and beta1 must have the same shape")
        if not (np.all(np.isfinite(self.beta0)) and np.all(np.isfinite(self.beta1))):
            raise ValueError("location coefficients must be finite")
        if self.nu < 0:
            raise ValueError(f"nu must be nonnegative, got {self.nu}")
        if self.delta < 0:
            raise ValueError(f"delta must be a nonnegative index, got {self.delta}")

    @property
    def M(self) -> int:
        return self.beta0.shape[0]

    def selection_vector(self, K: int) -> np.ndarray:
        """The one-hot selection vector over ``K`` covariates."""
        if self.delta >= K:
            raise IndexError(f"delta={self.delta} outside 0..{K - 1}")
        e = np.zeros(K)
        e[self.delta] = 1.0
        return e


@dataclass(frozen=True)
class PosteriorDraw:
    learners: tuple[BaseLearnerParams, ...]
    Sigma: np.ndarray
    loglik: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "learners", tuple(self.learners))
        S = _frozen(np.atleast_2d(self.Sigma))
        if S.shape[0] != S.shape[1] or not np.allclose(S, S.T):
            raise ValueError("Sigma must be symmetric")
        object.__setattr__(self, "Sigma", S)

    @property
    def J(self) -> int:
        return len(self.learners)

    @property
    def M(self) -> int:
        return self.Sigma.shape[0]

    @property
    def sigma2(self) -> float:
        if self.M != 1:
            raise AttributeError("sigma2 is only defined for M == 1")
        return float(self.Sigma[0, 0])


class Posterior(Sequence):
    """Retained MCMC draws stored as stacked arrays.

    Indexing yields :class:`PosteriorDraw` objects; the array attributes are
    what the vectorised predictive code works with.

    Attributes
    ----------
    nu, mu : (D, J) arrays
    delta : (D, J) int array, 0-based covariate index
    beta0, beta1 : (D, J, M) arrays
    Sigma : (D, M, M) array
    loglik : (D,) array
    meta : dict
        Model kind, lag order, names, standardisation constants and config.
    """

    def __init__(self, nu, mu, delta, beta0, beta1, Sigma, loglik=None, meta=None, diagnostics=None):
        self.nu = np.asarray(nu, dtype=float)
        self.mu = np.asarray(mu, dtype=float)
        self.delta = np.asarray(delta, dtype=np.int64)
        self.beta0 = np.asarray(beta0, dtype=float)
        self.beta1 = np.asarray(beta1, dtype=float)
        self.Sigma = np.asarray(Sigma, dtype=float)
        D, J = self.nu.shape
        M = self.Sigma.shape[-1]
        if loglik is None:
            loglik = np.full(D, np.nan)
        self.loglik = np.asarray(loglik, dtype=float)
        for name, shape in (
            ("mu", (D, J)),
            ("delta", (D, J)),
            ("beta0", (D, J, M)),
            ("beta1", (D, J, M)),
            ("Sigma", (D, M, M)),
            ("loglik", (D,)),
        ):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        self.meta = dict(meta or {})
        self.diagnostics = diagnostics

    @property
    def J(self) -> int:
        return self.nu.shape[1]

    @property
    def M(self) -> int:
        return self.Sigma.shape[-1]

    @property
    def K(self) -> int:
        return int(self.meta.get("K", int(self.delta.max()) + 1 if self.delta.size else 0))

    def __len__(self) -> int:
        return self.nu.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            idx = range(*i.indices(len(self)))
            return [self[k] for k in idx]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        learners = tuple(
            BaseLearnerParams(self.nu[i, j], self.mu[i, j], self.delta[i, j], self.beta0[i, j], self.beta1[i, j])
            for j in range(self.J)
        )
        return PosteriorDraw(learners, self.Sigma[i], float(self.loglik[i]))

    @classmethod
    def from_draws(cls, draws: Sequence[PosteriorDraw], meta=None) -> Posterior:
        draws = list(draws)
        if not draws:
            raise ValueError("need at least one draw")
        return cls(
            nu=[[l.nu for l in d.learners] for d in draws],
            mu=[[l.mu for l in d.learners] for d in draws],
            delta=[[l.delta for l in d.learners] for d in draws],
            beta0=[[l.beta0 for l in d.learners] for d in draws],
            beta1=[[l.beta1 for l in d.learners] for d in draws],
            Sigma=[d.Sigma for d in draws],
            loglik=[d.loglik for d in draws],
            meta=meta,
        )

    def subset(self, idx) -> Posterior:
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return Posterior(
            self.nu[idx], self.mu[idx], self.delta[idx], self.beta0[idx], self.beta1[idx],
            self.Sigma[idx], self.loglik[idx], meta=self.meta,
        )

    # -- persistence -------------------------------------------------------

    def _record_dtype(self) -> np.dtype:
        return record_dtype(self.J, self.M)

    def to_bytes(self) -> bytes:
        D, J, M = len(self), self.J, self.M
        meta = json.dumps(_jsonable(self.meta), sort_keys=True).encode()
        header = _HEADER.pack(MAGIC, FORMAT_VERSION, J, M, self.K, D) + _META_LEN.pack(len(meta)) + meta
        rec = np.zeros(D, dtype=self._record_dtype())
        rec["learners"]["nu"] = self.nu
        rec["learners"]["mu"] = self.mu
        rec["learners"]["delta"] = self.delta
        rec["learners"]["beta0"] = self.beta0
        rec["learners"]["beta1"] = self.beta1
        rows, cols = np.tril_indices(M)
        rec["sigma_tril"] = self.Sigma[:, rows, cols]
        rec["loglik"] = self.loglik
        return header + rec.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> Posterior:
        if len(buf) < _HEADER.size + _META_LEN.size:
            raise DrawFileError("file too short for header")
        magic, version, J, M, K, D = _HEADER.unpack_from(buf, 0)
        if magic != MAGIC:
            raise DrawFileError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise DrawFileError(f"unsupported draw-file version {version}")
        off = _HEADER.size
        (meta_len,) = _META_LEN.unpack_from(buf, off)
        off += _META_LEN.size
        meta = json.loads(buf[off:off + meta_len].decode()) if meta_len else {}
        off += meta_len
        dt = record_dtype(J, M)
        if len(buf) - off != D * dt.itemsize:
            raise DrawFileError(f"expected {D} draws of {dt.itemsize} bytes, found {len(buf) - off} bytes")
        rec = np.frombuffer(buf, dtype=dt, count=D, offset=off)
        Sigma = np.zeros((D, M, M))
        rows, cols = np.tril_indices(M)
        Sigma[:, rows, cols] = rec["sigma_tril"]
        Sigma[:, cols, rows] = rec["sigma_tril"]
        meta.setdefault("K", K)
        L = rec["learners"]
        return cls(
            L["nu"].copy(), L["mu"].copy(), L["delta"].astype(np.int64), L["beta0"].copy(),
            L["beta1"].copy(), Sigma, rec["loglik"].copy(), meta=meta,
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> Posterior:
        return cls.from_bytes(Path(path).read_bytes())


def record_dtype(J: int, M: int) -> np.dtype:
    learner = np.dtype([
        ("nu", "<f8"), ("mu", "<f8"), ("delta", "<u4"), ("beta0", "<f8", (M,)), ("beta1", "<f8", (M,)),
    ])
    return np.dtype([
        ("learners", learner, (J,)), ("sigma_tril", "<f8", (M * (M + 1) // 2,)), ("loglik", "<f8"),
    ])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class TimeSeriesPanel:
    """A T x M panel of (transformed) series with Appendix-style metadata."""

    values: np.ndarray
    names: list[str]
    tcodes: list[int] = field(default_factory=list)
    classes: list[str] = field(default_factory=list)
    index: pd.Index | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        T, M = self.values.shape
        self.names = list(self.names)
        if len(self.names) != M:
            raise DataError(f"{len(self.names)} names for {M} series")
        if not self.tcodes:
            self.tcodes = [1] * M
        if not self.classes:
            self.classes = ["slow"] * M
        if len(self.tcodes) != M or len(self.classes) != M:
            raise DataError("tcodes and classes must have one entry per series")
        for name, code in zip(self.names, self.tcodes):
            if int(code) not in range(1, 8):
                raise DataError(f"series {name}: transformation code {code} not in 1..7")
        for name, cls in zip(self.names, self.classes):
            if cls not in CLASSES:
                raise DataError(f"series {name}: class {cls!r} not one of {CLASSES}")
        bad = [n for n, ok in zip(self.names, np.isfinite(self.values).all(axis=0)) if not ok]
        if bad:
            raise DataError(f"missing or non-finite values in series: {', '.join(bad)}")
        if self.index is None:
            self.index = pd.RangeIndex(T)
        elif len(self.index) != T:
            raise DataError("index length does not match values")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]

    def check_size(self, P: int) -> None:
        if self.T <= self.M * P:
            warnings.warn(f"T={self.T} does not exceed M*P={self.M * P}; the panel is short for this lag order")

    def select(self, names: Sequence[str]) -> TimeSeriesPanel:
        missing = [n for n in names if n not in self.names]
        if missing:
            raise DataError(f"unknown series: {', '.join(missing)}")
        idx = [self.names.index(n) for n in names]
        return TimeSeriesPanel(
            self.values[:, idx], list(names), [self.tcodes[i] for i in idx],
            [self.classes[i] for i in idx], self.index,
        )

    def head(self, n: int) -> TimeSeriesPanel:
        return TimeSeriesPanel(self.values[:n], self.names, self.tcodes, self.classes, self.index[:n])


class ParameterCount(NamedTuple):
    vast: int
    linear_var: int


def parameter_count(cfg: ModelConfig) -> ParameterCount:
    """Free parameters of the VAST model and of an unrestricted linear VAR with
    the same M and P."""
    J, M, P = cfg.J, cfg.M, cfg.P
    cov = M * (M + 1) // 2
    return ParameterCount(J * (3 + 2 * M) + cov, M * M * P + cov)
