"""Loading, transforming and splitting daily return and realized-measure series.

CSV layout: ``date,close,rv5[,bv,medrv,rk_parzen,rsv]`` with a header row,
one row per trading day and ISO-8601 dates.  A ``return`` column of
demeaned percent returns may replace ``close``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

PROXY_COLUMNS = ("rv5", "bv", "medrv", "rk_parzen", "rsv")
PROXY_LABELS = {"rv5": "RV5", "bv": "BV", "medrv": "MedRV", "rk_parzen": "RK-Parzen", "rsv": "RSV"}


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class MarketSeries:
    """Aligned daily returns and realized measures with a train/test split.

    ``rv`` is the raw realized measure of the primary proxy (RV5);
    ``proxy_set`` maps every available proxy column (RV5 included) to its
    raw values.  ``split_index`` is the first test-day position.
    """

    dates: np.ndarray
    returns: np.ndarray
    rv: np.ndarray
    split_index: int
    proxy_set: dict[str, np.ndarray] = field(default_factory=dict)
    raw_prices: np.ndarray | None = None
    n_dropped: int = 0

    def __post_init__(self):
        self.returns = np.asarray(self.returns, dtype=float)
        self.rv = np.asarray(self.rv, dtype=float)
        self.dates = np.asarray(self.dates).astype(str)
        n = self.returns.size
        if n < 2:
            raise DataError("a series needs at least two observations")
        if self.rv.size != n or self.dates.size != n:
            raise DataError("dates, returns and rv must have equal length")
        for k, v in self.proxy_set.items():
            self.proxy_set[k] = np.asarray(v, dtype=float)
            if self.proxy_set[k].size != n:
                raise DataError(f"proxy {k} has the wrong length")
        bad = np.flatnonzero(~(self.rv > 0))
        if bad.size:
            raise DataError(f"nonpositive realized measure at position {bad[0] + 1}")
        if not 0 < self.split_index < n:
            raise DataError(f"split index {self.split_index} outside (0, {n})")

    def __len__(self):
        return self.returns.size

    @property
    def n_train(self) -> int:
        return self.split_index

    @property
    def n_test(self) -> int:
        return len(self) - self.split_index

    def train(self):
        s = self.split_index
        return self.returns[:s], self.rv[:s]

    def test(self):
        s = self.split_index
        return self.returns[s:], self.rv[s:]

    def scaled_rv(self) -> "RescaledProxy":
        """RV5 rescaled to the training window's squared-return level."""
        return rescale_rv(self.returns[: self.split_index], self.rv)

    def scaled_proxies(self) -> dict[str, "RescaledProxy"]:
        ytr = self.returns[: self.split_index]
        return {k: rescale_rv(ytr, v) for k, v in self.proxy_set.items()}

    def to_csv(self, path) -> None:
        """Write with a ``return`` column so reloading reproduces every vector bit-exactly."""
        cols = ["date", "return", "rv5"] + [k for k in PROXY_COLUMNS[1:] if k in self.proxy_set]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for i in range(len(self)):
                row = [self.dates[i], repr(float(self.returns[i])), repr(float(self.rv[i]))]
                row += [repr(float(self.proxy_set[k][i])) for k in cols[3:]]
                w.writerow(row)


@dataclass
class RescaledProxy:
    values: np.ndarray
    scale_factor: float

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.values)


def demean_returns(prices) -> np.ndarray:
    """Percent log-returns minus their sample mean."""
    p = np.asarray(prices, dtype=float)
    if p.size < 2:
        raise ValueError("need at least two prices")
    if not np.all(p > 0):
        raise ValueError("prices must be positive")
    r = np.diff(np.log(p))
    return 100.0 * (r - r.mean())


def rescale_rv(returns, rv) -> RescaledProxy:
    """Scale ``rv`` by ``sum(y^2) / sum(rv)`` where both sums run over the training returns' span.

    ``returns`` is the training window; ``rv`` may extend past it and the
    factor estimated on the first ``len(returns)`` entries is applied to all.
    """
    y = np.asarray(returns, dtype=float)
    rv = np.asarray(rv, dtype=float)
    n = y.size
    if n == 0:
        raise ValueError("empty training window")
    if rv.size < n:
        raise ValueError("rv shorter than the training window")
    den = rv[:n].sum()
    num = np.dot(y, y)
    if not (den > 0 and num > 0):
        raise ValueError("rescaling needs positive sums of squared returns and rv")
    c = num / den
    return RescaledProxy(c * rv, float(c))


def load_csv(path, schema: dict[str, str] | None = None, split: float | int = 0.5) -> MarketSeries:
    """Read an index file and return a validated :class:`MarketSeries`.

    ``schema`` maps canonical names (``date``, ``close``, ``return``, ``rv5``,
    ``bv`` ...) to the file's column names.  ``split`` is a fraction of the
    return observations or an explicit first test position.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    schema = dict(schema or {})
    df = pd.read_csv(path, float_precision="round_trip")
    col = {k: schema.get(k, k) for k in ("date", "close", "return", *PROXY_COLUMNS)}

    missing = [col[k] for k in ("date", "rv5") if col[k] not in df.columns]
    has_ret = col["return"] in df.columns
    if not has_ret and col["close"] not in df.columns:
        missing.append(f"{col['close']} or {col['return']}")
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")

    value_col = col["return"] if has_ret else col["close"]
    proxies = [k for k in PROXY_COLUMNS if col[k] in df.columns]
    df = df.assign(_row=np.arange(1, len(df) + 1))
    needed = [col["date"], value_col] + [col[k] for k in proxies]
    keep = df[needed].notna().all(axis=1)
    n_dropped = int((~keep).sum())
    if n_dropped:
        log.info("%s: dropped %d row(s) with missing values", path.name, n_dropped)
    df = df[keep].reset_index(drop=True)

    for k in proxies:
        v = pd.to_numeric(df[col[k]], errors="coerce").to_numpy(float)
        bad = np.flatnonzero(~(v > 0))
        if bad.size:
            row = int(df["_row"].iloc[bad[0]])
            raise DataError(f"{path.name}: nonpositive {k} at row {row}")

    dates = pd.to_datetime(df[col["date"]]).dt.strftime("%Y-%m-%d").to_numpy()
    prices = None
    if has_ret:
        y = df[value_col].to_numpy(float)
        if abs(y.mean()) > 1e-9:
            y = y - y.mean()
        sl = slice(0, None)
    else:
        prices = df[value_col].to_numpy(float)
        try:
            y = demean_returns(prices)
        except ValueError as exc:
            raise DataError(f"{path.name}: {exc}") from exc
        sl = slice(1, None)

    proxy_set = {k: df[col[k]].to_numpy(float)[sl] for k in proxies}
    n = y.size
    split_index = int(split * n) if isinstance(split, float) else int(split)
    return MarketSeries(
        dates=dates[sl], returns=y, rv=proxy_set["rv5"], split_index=split_index,
        proxy_set=proxy_set, raw_prices=prices, n_dropped=n_dropped,
    )
