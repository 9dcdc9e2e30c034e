import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import flat_bars, replay_equity, two_regime_spec
from fusionquant.backtest import (
    Decision, InsufficientHistoryError, MarketData, Portfolio, TradeParams, _aligned, run_backtest,
)
from fusionquant.dataio import generate_synthetic
from fusionquant.metrics import METRIC_FIELDS
from fusionquant.regime import Signal
from fusionquant.strategy import FusionStrategy, StrategyConfig

DATES = np.datetime64("2021-03-01") + np.arange(6)


class Scripted:
    """Replays a fixed list of decisions from ``start``."""

    def __init__(self, decisions, start=0):
        self.decisions, self.start = decisions, start

    def start_index(self, data, params):
        return self.start

    def decide(self, i):
        return self.decisions[i - self.start]


def market(opens: dict, closes: dict | None = None):
    closes = closes or opens
    index = flat_bars(DATES, np.full(6, 100.0), np.linspace(100, 105, 6))
    index = index.__class__(index.dates, index.open, index.high, index.low, index.close, index.volume, np.ones(6))
    stocks = {k: flat_bars(DATES, opens[k], closes[k]) for k in opens}
    return MarketData(index, stocks)


LONG_A = Decision(Signal.LONG, ("A",))
FLAT = Decision(Signal.FLAT)


def test_scripted_round_trip_hand_accounting():
    opens = {"A": [10.0, 10.0, 12.0, 12.0, 12.0, 12.0]}
    closes = {"A": [10.0, 11.0, 12.5, 12.0, 12.0, 12.0]}
    p = TradeParams(initial_capital=1000.0)
    res = run_backtest(market(opens, closes), p, strategy=Scripted([LONG_A, FLAT, FLAT, FLAT, FLAT]))
    buy, sell = res.fills
    shares = math.floor(300.0 / (10.02 * 1.0003))
    assert (buy.side, buy.shares, buy.exec_price, buy.date) == ("buy", shares, 10.02, DATES[1])
    assert buy.fee == pytest.approx(shares * 10.02 * 0.0003, abs=1e-12)
    cash = 1000.0 - shares * 10.02 - buy.fee
    assert res.equity[0] == 1000.0
    assert res.equity[1] == pytest.approx(cash + shares * 11.0, abs=1e-9)
    assert (sell.side, sell.shares, sell.exec_price, sell.date) == ("sell", shares, 11.98, DATES[2])
    cash += shares * 11.98 * (1 - 0.0013)
    assert res.equity[2] == pytest.approx(cash, abs=1e-9)
    assert res.equity[-1] == pytest.approx(cash, abs=1e-9)


def test_sells_before_buys_and_rank_order():
    opens = {k: np.full(6, 10.0) for k in "ABC"}
    p = TradeParams(initial_capital=10_000.0)
    script = [Decision(Signal.LONG, ("A", "B")), Decision(Signal.LONG, ("C", "A")), FLAT, FLAT, FLAT]
    res = run_backtest(market(opens), p, strategy=Scripted(script))
    day1 = [(f.side, f.stock_id) for f in res.fills if f.date == DATES[1]]
    day2 = [(f.side, f.stock_id) for f in res.fills if f.date == DATES[2]]
    assert day1 == [("buy", "A"), ("buy", "B")]
    assert day2 == [("sell", "B"), ("buy", "C")]  # A kept, B replaced by C
    # second buy of day 1 spends 30% of the cash left after the first
    a, b = res.fills[0], res.fills[1]
    cash_after_a = 10_000.0 - a.notional - a.fee
    assert b.shares == math.floor(0.3 * cash_after_a / (10.02 * 1.0003))


def test_missing_open_skips_with_warning():
    opens = {"A": [10.0, np.nan, 10.0, 10.0, 10.0, 10.0]}
    idx = market({"A": np.full(6, 10.0)})
    a = idx.stocks["A"]
    keep = ~np.isnan(np.asarray(opens["A"]))
    data = MarketData(idx.index, {"A": a.slice(0, 1).__class__(a.dates[keep], a.open[keep], a.high[keep], a.low[keep], a.close[keep], a.volume[keep])})
    res = run_backtest(data, TradeParams(), strategy=Scripted([LONG_A, LONG_A, FLAT, FLAT, FLAT]))
    assert any("no open for A" in w for w in res.warnings)
    assert res.fills[0].date == DATES[2]


def test_fractional_shares_are_linear_in_capital():
    opens = {"A": [10.0, 10.0, 12.0, 12.0, 12.0, 12.0]}
    script = Scripted([LONG_A, LONG_A, FLAT, FLAT, FLAT])
    r1 = run_backtest(market(opens), TradeParams(initial_capital=1000.0, fractional_shares=True), strategy=script)
    r2 = run_backtest(market(opens), TradeParams(initial_capital=5000.0, fractional_shares=True), strategy=script)
    np.testing.assert_allclose(r2.equity, 5 * r1.equity, rtol=1e-12)


def test_portfolio_sell_unknown_and_tiny_budget():
    book = Portfolio(100.0)
    p = TradeParams()
    assert book.sell(DATES[0], "X", 10.0, p) is None
    assert book.buy(DATES[0], "X", 1000.0, 50.0, p) is None
    assert book.cash == 100.0 and book.fills == []


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.sets(st.sampled_from("ABCD"), max_size=3)), min_size=5, max_size=5),
       st.integers(0, 2**31))
def test_random_scripts_reconcile_from_fill_log(script, seed):
    rng = np.random.default_rng(seed)
    opens = {k: 10 * np.exp(np.cumsum(rng.normal(0, 0.05, 6))) for k in "ABCD"}
    closes = {k: v * np.exp(rng.normal(0, 0.02, 6)) for k, v in opens.items()}
    decisions = [Decision(Signal.LONG if lg else Signal.FLAT, tuple(sorted(c))) for lg, c in script]
    p = TradeParams(initial_capital=50_000.0)
    data = market(opens, closes)
    res = run_backtest(data, p, strategy=Scripted(decisions))
    cl = _aligned(DATES, data.stocks, "close")
    np.testing.assert_allclose(res.equity, replay_equity(res.fills, res.dates, cl, p.initial_capital), atol=1e-6)
    cash = p.initial_capital
    for f in res.fills:
        cash += (-1 if f.side == "buy" else 1) * f.notional - f.fee
        assert cash >= -1e-9


def test_fusion_strategy_needs_history():
    m = generate_synthetic(two_regime_spec(n_days=120, n_stocks=5))
    data = MarketData(m.index, m.stocks, m.factors)
    with pytest.raises(InsufficientHistoryError):
        run_backtest(data, TradeParams(regime_train_window=12))


@pytest.fixture(scope="module")
def small_run():
    m = generate_synthetic(two_regime_spec(seed=5, n_days=330, n_stocks=12))
    data = MarketData(m.index, m.stocks, m.factors)
    p = TradeParams(regime_train_window=6)
    cfg = StrategyConfig(restarts=2)
    res = run_backtest(data, p, seed=3, strategy=FusionStrategy(data, p, cfg, seed=3))
    return data, p, cfg, res


def test_fusion_run_starts_on_month_boundary(small_run):
    data, p, _, res = small_run
    first = res.dates[0]
    i = int(np.searchsorted(data.index.dates, first))
    assert first.astype("datetime64[M]") != data.index.dates[i - 1].astype("datetime64[M]")
    assert res.equity[0] == p.initial_capital
    assert len(res.decisions) == len(res.dates) - 1


def test_fusion_run_deterministic(small_run):
    data, p, cfg, res = small_run
    again = run_backtest(data, p, seed=3, strategy=FusionStrategy(data, p, cfg, seed=3))
    np.testing.assert_array_equal(again.equity, res.equity)
    assert again.fills == res.fills


def test_fusion_picks_refresh_on_cycle(small_run):
    _, p, _, res = small_run
    cands = [d.candidates for d in res.decisions]
    for k in range(1, len(cands)):
        if k % p.picking_cycle:
            assert cands[k] == cands[k - 1]
    assert all(len(c) == p.n_pick for c in cands)
    assert all((d.signal is Signal.LONG) == (d.rank <= 2) for d in res.decisions)


def test_outputs_written(small_run, tmp_path):
    *_, res = small_run
    res.write_equity_csv(tmp_path / "e.csv")
    res.write_fills_csv(tmp_path / "f.csv")
    res.write_metrics_json(tmp_path / "m.json", "x")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "date,equity,benchmark" and len(lines) == len(res.dates) + 1
    assert (tmp_path / "f.csv").read_text().startswith("date,stock_id,side,shares,raw_price,exec_price,fee\n")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["name"] == "x"
    for period in doc["metrics"].values():
        assert set(METRIC_FIELDS) <= set(period)
