"""Market/factor CSV loading, HMM observables, trading calendar and a seeded
synthetic regime-switching market.

CSV layouts
-----------
index bars   ``date,open,high,low,close,volume,fsb``
stock bars   ``date,stock_id,open,high,low,close,volume``
factors      ``date,stock_id,mktcap,industry,<factor_1>,...,<factor_F>``

Dates are ISO-8601 (``YYYY-MM-DD``); an empty factor cell is a null.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .factors import FactorPanel

INDEX_HEADER = ("date", "open", "high", "low", "close", "volume", "fsb")
STOCK_HEADER = ("date", "stock_id", "open", "high", "low", "close", "volume")
FACTOR_FIXED_HEADER = ("date", "stock_id", "mktcap", "industry")
OBSERVABLE_NAMES = ("lgrfsb", "tv", "dlshlp", "dlr", "fdlr")
FDLR_LOOKBACK = 5

# Candidate factor vocabulary (Uqer names).
FACTOR_VOCABULARY = (
    "RVI", "OBV", "Hurst", "ARBR", "CCI20", "CCI5", "DEGM", "BIAS20", "BIAS5",
    "REVS10", "ROA", "ROE", "RSI", "TotalAssetGrowRate", "TotalProfitCostRate",
    "VOL120", "VOL15", "NetProfitGrowRate", "NPToTOR", "OperatingProfitGrowRate",
    "PB", "PCF", "PE", "PS", "PSY", "QuickRatio", "HBETA", "HSIGMA", "LCAP",
    "LFLO", "MA5", "MA20", "EMA5", "EMA20", "MLEV", "NetAssetGrowRate", "EPS",
    "EquityToAsset", "ETOP", "FinancialExpenseRate", "GrossIncomeRatio", "CTOP",
    "CurrentAssetsRatio", "CurrentRatio", "DAVOL5", "DebtsAssetRatio",
    "DilutedEPS", "AccountsPayablesTRate", "ARTRate", "BLEV",
    "BondsPayableToAsset", "CashToCurrentLiability",
)


class DataError(ValueError):
    """Base class for input data problems."""


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


class DomainError(DataError):
    pass


def _fmt(x: float) -> str:
    # repr of a Python float round-trips exactly
    return repr(float(x))


def _to_dates(values: Sequence[str] | np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype="datetime64[D]")


@dataclass(frozen=True, eq=False)
class BarSeries:
    """Date-sorted OHLCV bars; ``fsb`` (financing security balance) is set
    for index series only."""

    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    fsb: np.ndarray | None = None

    def __post_init__(self):
        cols = [self.open, self.high, self.low, self.close, self.volume]
        if self.fsb is not None:
            cols.append(self.fsb)
        n = len(self.dates)
        if any(len(c) != n for c in cols):
            raise ValidationError("bar columns have unequal lengths")
        if n > 1 and not np.all(np.diff(self.dates.astype(np.int64)) > 0):
            raise ValidationError("dates must be strictly increasing")
        bad = np.flatnonzero(
            (self.low > np.minimum(self.open, self.close))
            | (self.high < np.maximum(self.open, self.close))
        )
        if bad.size:
            raise ValidationError(f"OHLC invariant violated on {self.dates[bad[0]]}")

    def __len__(self) -> int:
        return len(self.dates)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BarSeries):
            return NotImplemented
        if (self.fsb is None) != (other.fsb is None):
            return False
        pairs = [
            (self.dates, other.dates), (self.open, other.open), (self.high, other.high),
            (self.low, other.low), (self.close, other.close), (self.volume, other.volume),
        ]
        if self.fsb is not None:
            pairs.append((self.fsb, other.fsb))
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in pairs)

    __hash__ = None

    def slice(self, start: int, stop: int) -> "BarSeries":
        return BarSeries(
            self.dates[start:stop], self.open[start:stop], self.high[start:stop],
            self.low[start:stop], self.close[start:stop], self.volume[start:stop],
            None if self.fsb is None else self.fsb[start:stop],
        )


def _build_series(rows: list[tuple[int, str, list[float]]], with_fsb: bool, where: str) -> BarSeries:
    rows = sorted(rows, key=lambda r: r[1])
    for (ln_a, d_a, _), (ln_b, d_b, _) in zip(rows, rows[1:]):
        if d_a == d_b:
            raise ValidationError(f"{where}: duplicate date {d_a} (lines {ln_a} and {ln_b})")
    for ln, d, v in rows:
        o, h, l, c, vol = v[:5]
        if l > min(o, c) or h < max(o, c):
            raise ValidationError(f"{where}: line {ln} ({d}) violates low <= open,close <= high")
        if vol < 0:
            raise ValidationError(f"{where}: line {ln} ({d}) has negative volume")
        if min(o, h, l, c) <= 0 or (with_fsb and v[5] <= 0):
            raise ValidationError(f"{where}: line {ln} ({d}) has a nonpositive price/fsb")
    arr = np.array([r[2] for r in rows], dtype=float).reshape(len(rows), 6 if with_fsb else 5)
    return BarSeries(
        _to_dates([r[1] for r in rows]),
        arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4],
        arr[:, 5] if with_fsb else None,
    )


def load_bars(path: str | Path, kind: str = "index") -> BarSeries | dict[str, BarSeries]:
    """Load an index bar CSV (returns one series) or a stock bar CSV
    (returns ``{stock_id: series}``)."""
    if kind not in ("index", "stock"):
        raise ValueError(f"unknown bar kind {kind!r}")
    expected = INDEX_HEADER if kind == "index" else STOCK_HEADER
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(h.strip() for h in next(reader, ()))
        if header != expected:
            raise ParseError(f"{path}: header {header!r} does not match {expected!r}")
        groups: dict[str, list] = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(expected):
                raise ParseError(f"{path}: line {lineno} has {len(rec)} fields, expected {len(expected)}")
            try:
                day = str(np.datetime64(rec[0].strip(), "D"))
                nums = rec[1:] if kind == "index" else rec[2:]
                vals = [float(x) for x in nums]
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"{path}: line {lineno}: non-finite value")
            key = "" if kind == "index" else rec[1].strip()
            groups.setdefault(key, []).append((lineno, day, vals))
    if kind == "index":
        return _build_series(groups.get("", []), True, str(path))
    return {sid: _build_series(rows, False, f"{path}[{sid}]") for sid, rows in sorted(groups.items())}


def write_bars(series: BarSeries | dict[str, BarSeries], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(series, BarSeries):
            if series.fsb is None:
                raise ValueError("index series requires fsb")
            w.writerow(INDEX_HEADER)
            for i in range(len(series)):
                w.writerow([str(series.dates[i]), _fmt(series.open[i]), _fmt(series.high[i]),
                            _fmt(series.low[i]), _fmt(series.close[i]), _fmt(series.volume[i]),
                            _fmt(series.fsb[i])])
            return
        w.writerow(STOCK_HEADER)
        rows = []
        for sid, s in series.items():
            for i in range(len(s)):
                rows.append((s.dates[i], sid, s.open[i], s.high[i], s.low[i], s.close[i], s.volume[i]))
        rows.sort(key=lambda r: (r[0], r[1]))
        for d, sid, *vals in rows:
            w.writerow([str(d), sid, *(_fmt(v) for v in vals)])


def load_factor_panel(path: str | Path) -> FactorPanel:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if tuple(header[:4]) != FACTOR_FIXED_HEADER or len(header) < 5:
            raise ParseError(f"{path}: factor header must start with {FACTOR_FIXED_HEADER!r} and name >= 1 factor")
        names = tuple(header[4:])
        if len(set(names)) != len(names):
            raise ParseError(f"{path}: duplicate factor column")
        dates, stocks, caps, inds, vals = [], [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}: line {lineno} has {len(rec)} fields, expected {len(header)}")
            try:
                dates.append(np.datetime64(rec[0].strip(), "D"))
                cap = float(rec[2])
                row = [float(c) if c.strip() else math.nan for c in rec[4:]]
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            if not cap > 0:
                raise ValidationError(f"{path}: line {lineno}: mktcap must be > 0")
            stocks.append(rec[1].strip())
            caps.append(cap)
            inds.append(rec[3].strip())
            vals.append(row)
    return FactorPanel.from_rows(
        np.array(dates, dtype="datetime64[D]"), np.array(stocks, dtype=str), names,
        np.array(vals, dtype=float).reshape(len(vals), len(names)),
        np.array(caps, dtype=float), np.array(inds, dtype=str),
    )


def write_factor_panel(panel: FactorPanel, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*FACTOR_FIXED_HEADER, *panel.names])
        for i in range(panel.n_rows):
            cells = ["" if math.isnan(v) else _fmt(v) for v in panel.values[i]]
            w.writerow([str(panel.dates[i]), panel.stocks[i], _fmt(panel.mktcap[i]), panel.industry[i], *cells])


# ---------------------------------------------------------------------------
# HMM observables
# ---------------------------------------------------------------------------

class ObservationRow(NamedTuple):
    lgrfsb: float
    tv: float
    dlshlp: float
    dlr: float
    fdlr: float


@dataclass(frozen=True, eq=False)
class Observables:
    dates: np.ndarray
    values: np.ndarray  # (T, 5) in OBSERVABLE_NAMES order

    def __len__(self) -> int:
        return len(self.dates)

    def row(self, i: int) -> ObservationRow:
        return ObservationRow(*map(float, self.values[i]))


def compute_observables(index_bars: BarSeries) -> Observables:
    """Five index observables per day; the first five bars only serve as
    lookback, so the output has ``len(index_bars) - 5`` rows."""
    if index_bars.fsb is None:
        raise DomainError("index bars need a financing security balance column")
    if len(index_bars) < FDLR_LOOKBACK + 1:
        raise DomainError(f"need at least {FDLR_LOOKBACK + 1} bars, got {len(index_bars)}")
    for name in ("high", "low", "close", "fsb"):
        if np.any(getattr(index_bars, name) <= 0):
            raise DomainError(f"nonpositive {name} value")
    log_close = np.log(index_bars.close)
    t = slice(FDLR_LOOKBACK, None)
    lgrfsb = np.diff(np.log(index_bars.fsb))[FDLR_LOOKBACK - 1:]
    tv = index_bars.volume[t].astype(float)
    dlshlp = np.log(index_bars.high[t] / index_bars.low[t])
    dlr = np.diff(log_close)[FDLR_LOOKBACK - 1:]
    fdlr = log_close[FDLR_LOOKBACK:] - log_close[:-FDLR_LOOKBACK]
    values = np.column_stack([lgrfsb, tv, dlshlp, dlr, fdlr])
    return Observables(index_bars.dates[t].copy(), values)


# ---------------------------------------------------------------------------
# Calendar
# ---------------------------------------------------------------------------

class TradingCalendar:
    def __init__(self, dates: np.ndarray):
        dates = _to_dates(dates)
        if len(dates) > 1 and not np.all(np.diff(dates.astype(np.int64)) > 0):
            raise ValidationError("calendar dates must be strictly increasing")
        self.dates = dates
        months = dates.astype("datetime64[M]")
        self.month_start = np.ones(len(dates), dtype=bool)
        self.month_start[1:] = months[1:] != months[:-1]

    def __len__(self) -> int:
        return len(self.dates)

    def index_of(self, day) -> int:
        i = int(np.searchsorted(self.dates, np.datetime64(day, "D")))
        if i >= len(self.dates) or self.dates[i] != np.datetime64(day, "D"):
            raise KeyError(f"{day} is not a trading day")
        return i

    def months_back(self, i: int, months: int) -> int:
        """Index of the first trading day on or after ``dates[i]`` minus
        ``months`` calendar months (same day-of-month, clamped)."""
        d = self.dates[i]
        m = d.astype("datetime64[M]")
        day_of_month = int((d - m.astype("datetime64[D]")).astype(int))
        target_m = m - np.timedelta64(months, "M")
        next_m = (target_m + np.timedelta64(1, "M")).astype("datetime64[D]")
        target = min(target_m.astype("datetime64[D]") + np.timedelta64(day_of_month, "D"),
                     next_m - np.timedelta64(1, "D"))
        return int(np.searchsorted(self.dates, target))


# ---------------------------------------------------------------------------
# Synthetic market
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Regime:
    drift: float
    volatility: float
    duration: float
    name: str = ""


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int
    regimes: tuple[Regime, ...]
    n_stocks: int = 30
    n_days: int = 500
    n_factors: int = 52
    n_signal: int = 3
    signal_strength: float = 0.6
    n_industries: int = 5
    idio_vol: float = 0.015
    null_rate: float = 0.002
    start_date: str = "2016-01-04"

    def __post_init__(self):
        object.__setattr__(self, "regimes", tuple(
            r if isinstance(r, Regime) else Regime(**r) if isinstance(r, dict) else Regime(*r)
            for r in self.regimes
        ))
        if not self.regimes:
            raise ValidationError("at least one regime required")
        for r in self.regimes:
            if r.volatility < 0 or r.duration < 1:
                raise ValidationError(f"invalid regime {r}")
        if min(self.n_stocks, self.n_days, self.n_factors) < 1:
            raise ValidationError("counts must be >= 1")
        if not 0 <= self.n_signal <= self.n_factors:
            raise ValidationError("n_signal must lie in [0, n_factors]")
        if not 0 <= self.null_rate < 1:
            raise ValidationError("null_rate must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SyntheticMarket:
    index: BarSeries
    stocks: dict[str, BarSeries]
    factors: FactorPanel
    regimes: np.ndarray  # true regime index per trading day
    signal_factors: tuple[str, ...] = field(default=())  # strongest first


def _ohlc(rng, prev_close, close, vol):
    n = len(close)
    open_ = prev_close * np.exp(0.25 * vol * rng.standard_normal(n))
    top = np.maximum(open_, close)
    bottom = np.minimum(open_, close)
    high = top * np.exp(0.5 * vol * np.abs(rng.standard_normal(n)))
    low = bottom * np.exp(-0.5 * vol * np.abs(rng.standard_normal(n)))
    # rounding in exp can leave high a hair below top
    return open_, np.maximum(high, top), np.minimum(low, bottom)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticMarket:
    """Seeded regime-switching market.

    The index log return on a day in regime ``k`` is
    ``drift_k + volatility_k * eps``; regimes follow a Markov chain whose
    self-transition probability is ``1 - 1/duration``. Stock log returns
    load on the index return plus idiosyncratic noise. The first
    ``n_signal`` entries of ``signal_factors`` carry a linear signal on the
    stock's next-day idiosyncratic return, with strength halving per rank;
    every other factor is noise plus a size and industry exposure.
    """
    rng = np.random.default_rng(spec.seed)
    n_reg, T, S, F = len(spec.regimes), spec.n_days, spec.n_stocks, spec.n_factors
    drift = np.array([r.drift for r in spec.regimes])
    vol = np.array([r.volatility for r in spec.regimes])
    stay = np.array([1.0 - 1.0 / r.duration for r in spec.regimes])

    path = np.empty(T, dtype=np.int64)
    path[0] = rng.integers(n_reg)
    switch_u = rng.random(T)
    switch_to = rng.integers(max(n_reg - 1, 1), size=T)
    for t in range(1, T):
        k = path[t - 1]
        if n_reg > 1 and switch_u[t] >= stay[k]:
            path[t] = switch_to[t] + (switch_to[t] >= k)
        else:
            path[t] = k

    dates = np.busday_offset(np.datetime64(spec.start_date, "D"), np.arange(T), roll="forward")
    day_vol = vol[path]
    idx_ret = drift[path] + day_vol * rng.standard_normal(T)
    idx_ret[0] = 0.0
    close = 3000.0 * np.exp(np.cumsum(idx_ret))
    prev_close = np.concatenate([[close[0]], close[:-1]])
    open_, high, low = _ohlc(rng, prev_close, close, day_vol)
    volume = 1e9 * (1.0 + 40.0 * day_vol) * np.exp(0.1 * rng.standard_normal(T))
    fsb = 1e11 * np.exp(np.cumsum(0.5 * drift[path] + 0.1 * day_vol * rng.standard_normal(T)))
    index = BarSeries(dates, open_, high, low, close, volume, fsb)

    # T+1 stock returns so the last day's factors still have a forward target
    betas = rng.uniform(0.6, 1.4, size=S)
    idio = spec.idio_vol * rng.standard_normal((T + 1, S))
    idx_next = np.concatenate([idx_ret, [drift[path[-1]] + vol[path[-1]] * rng.standard_normal()]])
    stock_ret = idx_next[:, None] * betas[None, :] + idio
    stock_ret[0] = 0.0
    stock_close = rng.uniform(10.0, 100.0, size=S) * np.exp(np.cumsum(stock_ret[:T], axis=0))
    stock_ids = tuple(f"S{j:04d}" for j in range(S))
    stocks = {}
    for j, sid in enumerate(stock_ids):
        c = stock_close[:, j]
        pc = np.concatenate([[c[0]], c[:-1]])
        o, h, l = _ohlc(rng, pc, c, day_vol + spec.idio_vol)
        v = 1e6 * np.exp(0.3 * rng.standard_normal(T))
        stocks[sid] = BarSeries(dates, o, h, l, c, v)

    names = tuple(FACTOR_VOCABULARY[:F]) if F <= len(FACTOR_VOCABULARY) else (
        FACTOR_VOCABULARY + tuple(f"F{j:03d}" for j in range(len(FACTOR_VOCABULARY) + 1, F + 1))
    )
    industry_of = np.array([f"IND{j % spec.n_industries:02d}" for j in rng.permutation(S)])
    base_cap = np.exp(rng.uniform(np.log(5e9), np.log(5e11), size=S))
    mktcap = base_cap[None, :] * stock_close / stock_close[0][None, :]
    ind_effect = rng.standard_normal((spec.n_industries, F))
    ind_codes = np.array([int(s[3:]) for s in industry_of])
    size_load = rng.normal(0.0, 0.5, size=F)
    log_cap = np.log(mktcap)
    values = (
        rng.standard_normal((T, S, F))
        + size_load[None, None, :] * (log_cap - log_cap.mean())[:, :, None]
        + ind_effect[ind_codes][None, :, :]
    )
    signal_idx = rng.choice(F, size=spec.n_signal, replace=False)
    fwd_idio = idio[1:] / max(spec.idio_vol, 1e-12)
    for rank, f in enumerate(signal_idx):
        strength = spec.signal_strength / (2.0 ** rank)
        values[:, :, f] = strength * fwd_idio + np.sqrt(max(1.0 - strength ** 2, 0.05)) * rng.standard_normal((T, S))
    if spec.null_rate > 0:
        values[rng.random((T, S, F)) < spec.null_rate] = np.nan

    panel = FactorPanel.from_rows(
        np.repeat(dates, S), np.tile(np.array(stock_ids), T), names,
        values.reshape(T * S, F), mktcap.reshape(-1), np.tile(industry_of, T),
    )
    return SyntheticMarket(index, stocks, panel, path, tuple(names[f] for f in signal_idx))
