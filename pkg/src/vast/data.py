"""Panel ingestion, transformation codes, standardisation, lags and the synthetic DGP."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .core import CLASSES, DataError, TimeSeriesPanel

# observations lost at the start of the sample by each code
TCODE_LOSS = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}


def apply_tcode(series, code: int) -> np.ndarray:
    """Apply a transformation code and drop the leading observations it consumes.

    1 level, 2 first difference, 3 second difference, 4 log, 5 log difference,
    6 second log difference, 7 first difference of the gross growth rate.
    """
    x = np.asarray(series, dtype=float)
    code = int(code)
    if code not in TCODE_LOSS:
        raise DataError(f"transformation code {code} not in 1..7")
    if code in (4, 5, 6) and np.any(x <= 0):
        raise DataError(f"transformation code {code} needs strictly positive levels")
    if code == 7 and np.any(x[:-1] == 0):
        raise DataError("transformation code 7 divides by a zero level")
    if code == 1:
        return x.copy()
    if code == 2:
        return np.diff(x)
    if code == 3:
        return np.diff(x, n=2)
    if code == 4:
        return np.log(x)
    if code == 5:
        return np.diff(np.log(x))
    if code == 6:
        return np.diff(np.log(x), n=2)
    return np.diff(x[1:] / x[:-1] - 1.0)


def invert_tcode(transformed, code: int, initial) -> np.ndarray:
    """Rebuild levels from transformed values for codes 1, 2, 4 and 5.

    ``initial`` is the first level dropped by differencing (ignored for 1 and 4).
    """
    z = np.asarray(transformed, dtype=float)
    if code == 1:
        return z.copy()
    if code == 4:
        return np.exp(z)
    if code == 2:
        return np.concatenate([[initial], initial + np.cumsum(z)])
    if code == 5:
        return np.exp(np.concatenate([[np.log(initial)], np.log(initial) + np.cumsum(z)]))
    raise ValueError(f"inversion not implemented for code {code}")


def transform_panel(levels: np.ndarray, tcodes, names=None):
    """Transform every column and trim all of them by the panel-wide maximum loss.

    Returns ``(values, n_dropped)``.
    """
    levels = np.asarray(levels, dtype=float)
    names = names or [f"series {i}" for i in range(levels.shape[1])]
    loss = max(TCODE_LOSS[int(c)] for c in tcodes)
    cols = []
    for i, code in enumerate(tcodes):
        try:
            z = apply_tcode(levels[:, i], code)
        except DataError as exc:
            raise DataError(f"{names[i]}: {exc}") from None
        cols.append(z[loss - TCODE_LOSS[int(code)]:])
    return np.column_stack(cols), loss


def standardize(X):
    """Column-wise (X - mean) / sd with the n-1 convention.

    Returns ``(Xs, means, sds)``; raises on constant columns.
    """
    X = np.asarray(X, dtype=float)
    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(sds > 0))
    if bad.size:
        raise DataError(f"columns {bad.tolist()} have zero standard deviation")
    return (X - means) / sds, means, sds


def unstandardize(Xs, means, sds):
    return np.asarray(Xs) * sds + means


def build_lag_matrix(Y, P: int):
    """Stack P lags: row t of X is (y_{t-1}', ..., y_{t-P}')'; K = M P.

    Returns ``(X, Y_aligned)`` with the first P rows of Y dropped.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    T = Y.shape[0]
    if T <= P:
        raise DataError(f"need T > P, got T={T}, P={P}")
    X = np.hstack([Y[P - p:T - p] for p in range(1, P + 1)])
    return X, Y[P:]


def lag_vector(history, P: int) -> np.ndarray:
    """(y_T', ..., y_{T-P+1}')' from the last P rows of ``history``; the covariate
    vector for predicting period T+1."""
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[:, None]
    if history.shape[0] < P:
        raise DataError(f"need at least P={P} observations of history, got {history.shape[0]}")
    return history[::-1][:P].reshape(-1)


# -- synthetic DGP --------------------------------------------------------------


@dataclass(frozen=True)
class DgpSpec:
    """y_t = 0.9 y_{t-1} + beta'x_{t-1} + kappa'x_{t-1}^2 + u_t."""

    T: int = 300
    K: int = 25
    seed: int = 0
    sparsity: float = 0.6
    ar: float = 0.9
    beta_mean: float = 3.0
    beta_var: float = 9.0
    kappa_mean: float = 2.0
    kappa_var: float = 9.0
    x_lags: int = 4
    y_lags: int = 1

    def __post_init__(self):
        if not 0 <= self.sparsity <= 1:
            raise ValueError("sparsity must lie in [0, 1]")


@dataclass
class DgpRealization:
    y: np.ndarray
    X: np.ndarray
    beta_true: np.ndarray
    kappa_true: np.ndarray
    names: list
    var_index: np.ndarray
    lag: np.ndarray
    x_raw: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=self.names)
        df.insert(0, "y", self.y)
        return df


def simulate_dgp(spec: DgpSpec = DgpSpec(), *, beta=None, kappa=None) -> DgpRealization:
    """Simulate the sparse quadratic AR-X process and its model-facing regressors.

    Regressors at t are x_{t-1}, ..., x_{t-x_lags} and y_{t-1}, ..., y_{t-y_lags};
    ``var_index`` is 0 for y and i for x_i, ``lag`` the lag of each column.
    """
    rng = np.random.default_rng(spec.seed)
    K = spec.K
    if beta is None:
        beta = rng.normal(spec.beta_mean, np.sqrt(spec.beta_var), K)
        beta[rng.permutation(K)[: int(round(spec.sparsity * K))]] = 0.0
    if kappa is None:
        kappa = rng.normal(spec.kappa_mean, np.sqrt(spec.kappa_var), K)
        kappa[rng.permutation(K)[: int(round(spec.sparsity * K))]] = 0.0
    beta = np.asarray(beta, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    L = max(spec.x_lags, spec.y_lags, 1)
    # x_raw[i] is x_{i-L}; y_full[i] is y_{i-L}, with y_0 = 0 and presample y's zero
    x_raw = rng.standard_normal((spec.T + L, K))
    u = rng.standard_normal(spec.T)
    y_full = np.zeros(spec.T + L + 1)
    for t in range(1, spec.T + 1):
        xl = x_raw[L + t - 1]
        y_full[L + t] = spec.ar * y_full[L + t - 1] + beta @ xl + kappa @ xl**2 + u[t - 1]
    y = y_full[L + 1:]
    cols, names, var_index, lag = [], [], [], []
    for p in range(1, L + 1):
        if p <= spec.y_lags:
            cols.append(y_full[L + 1 - p:L + 1 - p + spec.T])
            names.append(f"y_lag{p}")
            var_index.append(0)
            lag.append(p)
        if p <= spec.x_lags:
            block = x_raw[L - p + 1:L - p + 1 + spec.T]
            for i in range(K):
                cols.append(block[:, i])
                names.append(f"x{i + 1}_lag{p}")
                var_index.append(i + 1)
                lag.append(p)
    return DgpRealization(
        y=y, X=np.column_stack(cols), beta_true=beta, kappa_true=kappa, names=names,
        var_index=np.array(var_index), lag=np.array(lag), x_raw=x_raw,
    )


# -- CSV ingestion ----------------------------------------------------------------


def parse_dates(labels) -> pd.Index:
    """Parse quarterly labels like ``1990Q1`` or ISO/US dates into an index."""
    labels = [str(s).strip() for s in labels]
    try:
        if all("Q" in s.upper() for s in labels):
            return pd.PeriodIndex([pd.Period(s.upper().replace(":", ""), freq="Q") for s in labels])
        return pd.DatetimeIndex(pd.to_datetime(labels))
    except (ValueError, TypeError) as exc:
        raise DataError(f"cannot parse dates: {exc}") from None


def locate(index: pd.Index, label) -> int:
    """Position of ``label`` (e.g. ``1990Q1``) in a date index."""
    if isinstance(index, pd.PeriodIndex):
        key = pd.Period(str(label).upper(), freq=index.freq)
    elif isinstance(index, pd.DatetimeIndex):
        key = pd.Timestamp(label)
        if str(label).upper().count("Q") == 1:
            key = pd.Period(str(label).upper(), freq="Q").start_time
    else:
        key = type(index[0])(label) if len(index) else label
    try:
        return int(index.get_loc(key))
    except KeyError:
        raise DataError(f"date {label} not in sample {index[0]}..{index[-1]}") from None


def read_panel(data_csv, meta_csv=None, *, series=None, start=None, end=None) -> TimeSeriesPanel:
    """Read level data plus metadata and return the transformed panel.

    ``data_csv`` has a header of mnemonics and dates in the first column. FRED
    style ``factors``/``transform`` rows directly under the header are skipped
    (the ``transform`` row supplies codes missing from the metadata).
    ``meta_csv`` has columns ``mnemonic``, ``tcode`` and ``class``.
    """
    df = pd.read_csv(data_csv, dtype=str)
    if df.shape[1] < 2:
        raise DataError(f"{data_csv}: expected a date column plus at least one series")
    date_col = df.columns[0]
    fred_codes = {}
    marker = df[date_col].astype(str).str.strip().str.lower()
    rows = np.flatnonzero(marker == "transform")
    if rows.size:
        fred_codes = {c: df.iloc[rows[0]][c] for c in df.columns[1:]}
    df = df[~marker.isin(["factors", "transform"])]
    df = df[df[date_col].notna() & (df[date_col].astype(str).str.strip() != "")]
    names = [str(c).strip() for c in df.columns[1:]]
    if series is not None:
        missing = [s for s in series if s not in names]
        if missing:
            raise DataError(f"series not in {data_csv}: {', '.join(missing)}")
        names = list(series)
    values = df[names].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    index = parse_dates(df[date_col])

    tcodes, classes = {}, {}
    if meta_csv is not None:
        meta = pd.read_csv(meta_csv, dtype=str)
        meta.columns = [c.strip().lower() for c in meta.columns]
        key = "mnemonic" if "mnemonic" in meta.columns else meta.columns[0]
        for col in ("tcode", "class"):
            if col not in meta.columns:
                raise DataError(f"{meta_csv}: missing column {col!r}")
        for _, row in meta.iterrows():
            tcodes[str(row[key]).strip()] = row["tcode"]
            classes[str(row[key]).strip()] = row["class"]
    codes, cls = [], []
    for n in names:
        code = tcodes.get(n, fred_codes.get(n))
        if code is None or (isinstance(code, float) and np.isnan(code)) or str(code).strip() in ("", "nan"):
            raise DataError(f"no transformation code for series {n}")
        try:
            codes.append(int(float(code)))
        except ValueError:
            raise DataError(f"series {n}: bad transformation code {code!r}") from None
        c = classes.get(n, "slow" if meta_csv is None else None)
        if c is None or str(c).strip().lower() not in CLASSES:
            raise DataError(f"series {n}: class missing or not one of {CLASSES}")
        cls.append(str(c).strip().lower())

    if start is not None:
        i0 = locate(index, start)
        values, index = values[i0:], index[i0:]
    if end is not None:
        i1 = locate(index, end)
        values, index = values[:i1 + 1], index[:i1 + 1]
    level_missing = [n for n, ok in zip(names, np.isfinite(values).all(axis=0)) if not ok]
    if level_missing:
        raise DataError(f"missing values in series: {', '.join(level_missing)}")
    transformed, loss = transform_panel(values, codes, names)
    return TimeSeriesPanel(transformed, names, codes, cls, index[loss:])


def write_panel_csv(path, index, values, names) -> None:
    df = pd.DataFrame(np.asarray(values), columns=names)
    df.insert(0, "date", [str(i) for i in index])
    df.to_csv(Path(path), index=False)


def write_meta_csv(path, names, tcodes, classes) -> None:
    pd.DataFrame({"mnemonic": names, "tcode": tcodes, "class": classes}).to_csv(Path(path), index=False)
