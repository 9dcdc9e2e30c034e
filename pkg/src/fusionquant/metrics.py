"""Performance metrics for an equity curve against a benchmark curve."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

PERIODS_PER_YEAR = 252
METRIC_FIELDS = (
    "annualized_return", "alpha", "beta", "sharpe_ratio", "volatility",
    "information_ratio", "max_drawdown", "annualized_turnover",
)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    annualized_return: float
    alpha: float
    beta: float
    sharpe_ratio: float
    volatility: float
    information_ratio: float
    max_drawdown: float
    annualized_turnover: float
    flags: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        # JSON has no NaN; undefined metrics become null
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def max_drawdown(curve) -> float:
    curve = np.asarray(curve, dtype=float)
    if curve.size == 0:
        raise MetricsError("empty curve")
    peak = np.maximum.accumulate(curve)
    return float(np.max((peak - curve) / peak))


def simple_returns(curve) -> np.ndarray:
    curve = np.asarray(curve, dtype=float)
    return curve[1:] / curve[:-1] - 1.0


def annualized_return(curve, periods: int = PERIODS_PER_YEAR) -> float:
    curve = np.asarray(curve, dtype=float)
    n = len(curve) - 1
    return float((curve[-1] / curve[0]) ** (periods / n) - 1.0)


def compute_metrics(
    curve,
    benchmark,
    traded_notional: float = 0.0,
    risk_free: float = 0.03,
    periods: int = PERIODS_PER_YEAR,
) -> MetricsReport:
    """Annualized metrics over aligned daily ``curve`` and ``benchmark``
    values. Undefined ratios (zero volatility or tracking error) are NaN and
    named in ``flags``."""
    curve = np.asarray(curve, dtype=float)
    benchmark = np.asarray(benchmark, dtype=float)
    if curve.shape != benchmark.shape:
        raise MetricsError("curve and benchmark must be aligned")
    if len(curve) < 2:
        raise MetricsError("need at least 2 points")
    r = simple_returns(curve)
    b = simple_returns(benchmark)
    n = len(r)
    var_b = np.var(b, ddof=1) if n > 1 else 0.0
    if not var_b > 0:
        raise MetricsError("benchmark has zero variance; beta undefined")
    flags = []
    beta = float(np.cov(r, b, ddof=1)[0, 1] / var_b)
    ann_r = annualized_return(curve, periods)
    ann_b = annualized_return(benchmark, periods)
    alpha = ann_r - risk_free - beta * (ann_b - risk_free)
    vol = float(np.std(r, ddof=1) * math.sqrt(periods)) if n > 1 else 0.0
    if vol > 0:
        sharpe = (ann_r - risk_free) / vol
    else:
        sharpe = math.nan
        flags.append("sharpe_undefined")
    active = r - b
    te = float(np.std(active, ddof=1) * math.sqrt(periods)) if n > 1 else 0.0
    if te > 0:
        ir = float(np.mean(active) * periods) / te
    else:
        ir = math.nan
        flags.append("information_ratio_undefined")
    turnover = float(traded_notional / np.mean(curve) * periods / n)
    return MetricsReport(ann_r, alpha, beta, sharpe, vol, ir, max_drawdown(curve), turnover, tuple(flags))
