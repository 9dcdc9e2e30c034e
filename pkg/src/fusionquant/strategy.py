"""Fusion of the network stock picker and the HMM market-timing model.

After the close of each simulated day ``i``:

* on the first day and the first trading day of every ``training_cycle``
  months, refit the regime model on the trailing ``regime_train_window``
  months of observables and the picker on the trailing
  ``picker_train_window`` days of factor rows;
* every ``picking_cycle`` days, re-pick ``n_pick`` candidates from day
  ``i``'s cross-section;
* every ``timing_cycle`` days, decode day ``i``'s state and go long iff it
  ranks in the top two.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .backtest import Decision, InsufficientHistoryError, MarketData, TradeParams
from .dataio import FDLR_LOOKBACK, TradingCalendar, compute_observables
from .factors import forward_returns_by_date, forward_returns_by_stock, preprocess
from .neural import NetworkShape, SwarmConfig
from .picker import PickerModel, fit_picker
from .regime import RegimeModel, Signal, fit_regime

log = logging.getLogger(__name__)

PICKER_SEED_OFFSET = 1000
REGIME_SEED_OFFSET = 2000


@dataclass(frozen=True)
class StrategyConfig:
    shape: NetworkShape = NetworkShape()
    swarm: SwarmConfig = SwarmConfig()
    k_select: int = 6
    ic_target: str = "stock"  # "stock": own next-day return; "index": next-day index return
    n_states: int = 5
    restarts: int = 5
    tol: float = 1e-6
    max_iter: int = 500

    def __post_init__(self):
        if self.ic_target not in ("stock", "index"):
            raise ValueError(f"ic_target must be 'stock' or 'index', got {self.ic_target!r}")


class FusionStrategy:
    def __init__(self, data: MarketData, params: TradeParams, config: StrategyConfig = StrategyConfig(), seed: int = 0):
        if data.factors is None:
            raise ValueError("fusion strategy needs a factor panel")
        self.data = data
        self.params = params
        self.config = config
        self.seed = seed
        self.calendar = TradingCalendar(data.index.dates)
        obs = compute_observables(data.index)
        self.obs = obs.values
        # observable row j belongs to trading day j + FDLR_LOOKBACK
        self.obs_offset = FDLR_LOOKBACK
        close = data.index.close
        self.index_next = np.full(len(close), np.nan)
        self.index_next[:-1] = close[1:] / close[:-1] - 1.0

        self.panel = preprocess(data.factors)
        self.stock_next = forward_returns_by_stock(self.panel, data.stocks)
        if config.ic_target == "index":
            self.ic_next = forward_returns_by_date(self.panel, data.index.dates, close)
        else:
            self.ic_next = self.stock_next

        self.picker: PickerModel | None = None
        self.regime: RegimeModel | None = None
        self.trained_month = None
        self.n_trainings = 0
        self.first_day: int | None = None
        self.candidates: tuple[str, ...] = ()
        self.last_timing: tuple[int | None, int | None, Signal] = (None, None, Signal.FLAT)

    def start_index(self, data: MarketData, params: TradeParams) -> int:
        """First month-start day whose trailing regime window is fully covered."""
        cal = self.calendar
        first_obs_day = self.obs_offset
        for i in np.flatnonzero(cal.month_start):
            if i <= first_obs_day or i < params.picker_train_window + 1:
                continue
            if cal.months_back(int(i), params.regime_train_window) >= first_obs_day:
                # at least one more month must follow
                if cal.months_back(len(cal) - 1, 1) < i:
                    break
                self.first_day = int(i)
                return int(i)
        raise InsufficientHistoryError(
            f"data must span at least {params.regime_train_window} months plus one month of trading"
        )

    def _regime_rows(self, i: int) -> slice:
        start_day = self.calendar.months_back(i, self.params.regime_train_window)
        return slice(max(start_day - self.obs_offset, 0), i - self.obs_offset + 1)

    def _retrain(self, i: int) -> None:
        rows = self._regime_rows(i)
        days = np.arange(rows.start, rows.stop) + self.obs_offset
        next_ret = self.index_next[days].copy()
        next_ret[days >= i] = np.nan  # not yet realized at day i's close
        self.regime = fit_regime(
            self.obs[rows], next_ret, self.config.n_states,
            seed=self.seed + REGIME_SEED_OFFSET + self.n_trainings,
            restarts=self.config.restarts, tol=self.config.tol, max_iter=self.config.max_iter,
        )

        dates = self.calendar.dates
        w = self.params.picker_train_window
        lo, hi = dates[max(i - w, 0)], dates[i - 1]
        mask = (self.panel.dates >= lo) & (self.panel.dates <= hi)
        window = self.panel.take(mask)
        swarm = self.config.swarm.replace(seed=self.seed + PICKER_SEED_OFFSET + self.n_trainings)
        self.picker = fit_picker(window, self.stock_next[mask], self.ic_next[mask],
                                 self.config.shape, self.config.k_select, swarm)
        self.n_trainings += 1
        log.info("retrained at %s: regime ll=%.3f, picker rmse=%.5f, factors=%s",
                 dates[i], self.regime.trace[-1], self.picker.trace[-1], self.picker.factors)

    def decide(self, i: int) -> Decision:
        if self.first_day is None:
            self.start_index(self.data, self.params)
        day = self.calendar.dates[i]
        month = day.astype("datetime64[M]")
        step = i - self.first_day
        if self.trained_month is None or month >= self.trained_month + np.timedelta64(
            self.params.training_cycle_months, "M"
        ):
            self._retrain(i)
            self.trained_month = month
        if step % self.params.picking_cycle == 0:
            today = self.panel.take(self.panel.dates == day)
            if today.n_rows:
                self.candidates = self.picker.pick(today, self.params.n_pick).stocks
            else:
                log.warning("%s: no factor rows, keeping previous candidates", day)
        if step % self.params.timing_cycle == 0:
            state, signal = self.regime.signal(self.obs[self._regime_rows(i)])
            self.last_timing = (state, int(self.regime.ranking.rank[state]), signal)
        state, rank, signal = self.last_timing
        return Decision(signal, self.candidates, state, rank)
