"""Daily backtest engine with proportional fees and fixed per-share slippage.

Decisions are taken after the close of day ``t`` and executed at the open
of day ``t + 1``; equity is marked at each close.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .dataio import BarSeries, TradingCalendar
from .factors import FactorPanel
from .metrics import MetricsError, MetricsReport, compute_metrics
from .regime import Signal

log = logging.getLogger(__name__)


class InsufficientHistoryError(ValueError):
    pass


@dataclass(frozen=True)
class TradeParams:
    initial_capital: float = 10_000_000.0
    buy_cost: float = 0.0003
    sell_cost: float = 0.0013
    slippage: float = 0.02  # currency per share, against the trader
    buy_fraction: float = 0.30  # of cash remaining when the order is placed
    sell_fraction: float = 1.0
    n_pick: int = 3
    picking_cycle: int = 7  # trading days
    timing_cycle: int = 1
    training_cycle_months: int = 1
    picker_train_window: int = 7  # trading days
    regime_train_window: int = 40  # months
    fractional_shares: bool = False
    risk_free: float = 0.03

    def __post_init__(self):
        for name in ("buy_cost", "sell_cost"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        for name in ("buy_fraction", "sell_fraction"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        for name in ("n_pick", "picking_cycle", "timing_cycle", "training_cycle_months",
                     "picker_train_window", "regime_train_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.initial_capital <= 0 or self.slippage < 0:
            raise ValueError("initial_capital must be > 0 and slippage >= 0")


@dataclass(frozen=True)
class Fill:
    date: np.datetime64
    stock_id: str
    side: str  # "buy" | "sell"
    shares: float
    raw_price: float
    exec_price: float
    fee: float

    @property
    def notional(self) -> float:
        return self.shares * self.exec_price


class Portfolio:
    def __init__(self, cash: float):
        self.cash = float(cash)
        self.positions: dict[str, float] = {}
        self.fills: list[Fill] = []

    def buy(self, date, stock_id: str, open_price: float, budget: float, params: TradeParams) -> Fill | None:
        exec_price = open_price + params.slippage
        shares = budget / (exec_price * (1.0 + params.buy_cost))
        if not params.fractional_shares:
            shares = math.floor(shares)
        if shares <= 0:
            return None
        notional = shares * exec_price
        fee = notional * params.buy_cost
        self.cash -= notional + fee
        self.positions[stock_id] = self.positions.get(stock_id, 0) + shares
        fill = Fill(date, stock_id, "buy", shares, open_price, exec_price, fee)
        self.fills.append(fill)
        return fill

    def sell(self, date, stock_id: str, open_price: float, params: TradeParams) -> Fill | None:
        held = self.positions.get(stock_id, 0)
        shares = held * params.sell_fraction
        if not params.fractional_shares:
            shares = math.floor(shares)
        exec_price = open_price - params.slippage
        if shares <= 0 or exec_price <= 0:
            return None
        notional = shares * exec_price
        fee = notional * params.sell_cost
        self.cash += notional - fee
        left = held - shares
        if left > 0:
            self.positions[stock_id] = left
        else:
            del self.positions[stock_id]
        fill = Fill(date, stock_id, "sell", shares, open_price, exec_price, fee)
        self.fills.append(fill)
        return fill

    def value(self, prices: dict[str, float]) -> float:
        return self.cash + sum(n * prices[s] for s, n in self.positions.items())


@dataclass(frozen=True)
class Decision:
    signal: Signal
    candidates: tuple[str, ...] = ()
    state: int | None = None
    rank: int | None = None


class Strategy(Protocol):
    def start_index(self, data: "MarketData", params: TradeParams) -> int: ...

    def decide(self, i: int) -> Decision: ...


@dataclass(frozen=True, eq=False)
class MarketData:
    index: BarSeries
    stocks: dict[str, BarSeries]
    factors: FactorPanel | None = None

    @property
    def calendar(self) -> TradingCalendar:
        return TradingCalendar(self.index.dates)


@dataclass(eq=False)
class BacktestResult:
    dates: np.ndarray
    equity: np.ndarray
    benchmark: np.ndarray  # index close rescaled to the initial capital
    fills: list[Fill]
    decisions: list[Decision]  # decisions[k] taken after the close of dates[k]
    metrics: MetricsReport | None
    yearly: dict[str, MetricsReport] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def traded_notional(self, start=None, end=None) -> float:
        total = 0.0
        for f in self.fills:
            if (start is None or f.date >= start) and (end is None or f.date <= end):
                total += f.notional
        return total

    def metrics_dict(self) -> dict:
        out = {"overall": self.metrics.to_dict() if self.metrics else None}
        out.update({y: m.to_dict() for y, m in self.yearly.items()})
        return out

    def write_equity_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "equity", "benchmark"])
            for d, e, b in zip(self.dates, self.equity, self.benchmark):
                w.writerow([str(d), repr(float(e)), repr(float(b))])

    def write_fills_csv(self, path) -> None:
        write_fills_csv(self.fills, path)

    def write_metrics_json(self, path, name: str = "fusion") -> None:
        Path(path).write_text(json.dumps({"name": name, "metrics": self.metrics_dict()}, indent=2, sort_keys=True))


def write_fills_csv(fills: Sequence[Fill], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "stock_id", "side", "shares", "raw_price", "exec_price", "fee"])
        for f in fills:
            w.writerow([str(f.date), f.stock_id, f.side, repr(float(f.shares)), repr(float(f.raw_price)),
                        repr(float(f.exec_price)), repr(float(f.fee))])


def _aligned(dates: np.ndarray, stocks: dict[str, BarSeries], attr: str) -> dict[str, np.ndarray]:
    out = {}
    for sid, s in stocks.items():
        col = np.full(len(dates), np.nan)
        pos = np.searchsorted(dates, s.dates)
        ok = (pos < len(dates)) & (dates[np.minimum(pos, len(dates) - 1)] == s.dates)
        col[pos[ok]] = getattr(s, attr)[ok]
        out[sid] = col
    return out


def _period_metrics(dates, equity, benchmark, fills, params) -> tuple[MetricsReport | None, dict]:
    def one(mask):
        if mask.sum() < 3:
            return None
        d = dates[mask]
        notional = sum(f.notional for f in fills if d[0] <= f.date <= d[-1])
        try:
            return compute_metrics(equity[mask], benchmark[mask], notional, params.risk_free)
        except MetricsError as exc:
            log.warning("metrics undefined for %s..%s: %s", d[0], d[-1], exc)
            return None

    overall = one(np.ones(len(dates), dtype=bool))
    years = dates.astype("datetime64[Y]").astype(int) + 1970
    yearly = {}
    for y in np.unique(years):
        m = one(years == y)
        if m is not None:
            yearly[str(y)] = m
    return overall, yearly


def run_backtest(
    data: MarketData,
    params: TradeParams = TradeParams(),
    seed: int = 0,
    strategy: Strategy | None = None,
) -> BacktestResult:
    """Simulate ``strategy`` (the fusion strategy by default) day by day."""
    if strategy is None:
        from .strategy import FusionStrategy

        strategy = FusionStrategy(data, params, seed=seed)
    dates = data.index.dates
    i0 = strategy.start_index(data, params)
    if not 0 <= i0 < len(dates) - 1:
        raise InsufficientHistoryError("no room to simulate after the warm-up window")
    opens = _aligned(dates, data.stocks, "open")
    closes = _aligned(dates, data.stocks, "close")
    last_close: dict[str, float] = {}
    book = Portfolio(params.initial_capital)
    notes: list[str] = []
    equity, decisions = [], []
    pending: Decision | None = None

    for i in range(i0, len(dates)):
        day = dates[i]
        if pending is not None:
            targets = pending.candidates if pending.signal is Signal.LONG else ()
            for sid in sorted(book.positions):
                if sid in targets:
                    continue
                px = opens.get(sid, np.full(len(dates), np.nan))[i]
                if np.isnan(px):
                    notes.append(f"{day}: no open for {sid}; sell skipped")
                    continue
                book.sell(day, sid, float(px), params)
            for sid in targets:
                if sid in book.positions:
                    continue
                px = opens.get(sid, np.full(len(dates), np.nan))[i]
                if np.isnan(px):
                    notes.append(f"{day}: no open for {sid}; buy skipped")
                    continue
                book.buy(day, sid, float(px), params.buy_fraction * book.cash, params)
        for sid, col in closes.items():
            if not np.isnan(col[i]):
                last_close[sid] = float(col[i])
        equity.append(book.value(last_close))
        if i < len(dates) - 1:
            pending = strategy.decide(i)
            decisions.append(pending)

    sim_dates = dates[i0:]
    equity = np.asarray(equity)
    bench = data.index.close[i0:] / data.index.close[i0] * params.initial_capital
    for n in notes:
        log.warning(n)
    overall, yearly = _period_metrics(sim_dates, equity, bench, book.fills, params)
    return BacktestResult(sim_dates, equity, bench, book.fills, decisions, overall, yearly, notes)

