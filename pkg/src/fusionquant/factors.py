"""Cross-sectional factor preprocessing, IC screening and PCA reduction.

A :class:`FactorPanel` is stored in long form: one row per (date, stock),
rows sorted by date then stock id. Every operation returns a new panel
and advances its ``stage``; calling an operation on the wrong stage raises
:class:`StageError`.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

# Cross-sections whose std is at or below this are treated as constant.
ZERO_STD = 1e-12


class Stage(enum.IntEnum):
    RAW = 0
    CLEANED = 1
    WINSORIZED = 2
    NEUTRALIZED = 3
    STANDARDIZED = 4


class StageError(RuntimeError):
    pass


class EmptyPanelError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class NeutralizationWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class FactorPanel:
    dates: np.ndarray  # (R,) datetime64[D]
    stocks: np.ndarray  # (R,) str
    names: tuple[str, ...]
    values: np.ndarray  # (R, F), NaN = null
    mktcap: np.ndarray  # (R,)
    industry: np.ndarray  # (R,) str
    stage: Stage = Stage.RAW
    # per-date (lower, upper) clamp bounds, each (n_dates, F); set by winsorize
    bounds: tuple[np.ndarray, np.ndarray] | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        R = len(self.dates)
        if self.values.shape != (R, len(self.names)):
            raise DimensionError(f"values shape {self.values.shape} != ({R}, {len(self.names)})")
        for arr in (self.stocks, self.mktcap, self.industry):
            if len(arr) != R:
                raise DimensionError("panel columns have unequal lengths")

    @classmethod
    def from_rows(cls, dates, stocks, names: Sequence[str], values, mktcap, industry) -> "FactorPanel":
        dates = np.asarray(dates, dtype="datetime64[D]")
        stocks = np.asarray(stocks, dtype=str)
        order = np.lexsort((stocks, dates))
        d, s = dates[order], stocks[order]
        dup = (d[1:] == d[:-1]) & (s[1:] == s[:-1])
        if np.any(dup):
            i = int(np.flatnonzero(dup)[0])
            raise ValueError(f"duplicate (date, stock) row: {d[i]}, {s[i]}")
        return cls(d, s, tuple(names), np.asarray(values, dtype=float)[order],
                   np.asarray(mktcap, dtype=float)[order], np.asarray(industry, dtype=str)[order])

    @property
    def n_rows(self) -> int:
        return len(self.dates)

    @property
    def n_factors(self) -> int:
        return len(self.names)

    def replace(self, **changes) -> "FactorPanel":
        return dataclasses.replace(self, **changes)

    def unique_dates(self) -> np.ndarray:
        return np.unique(self.dates)

    def cross_sections(self) -> list[slice]:
        """Row slices, one per date, in date order."""
        if self.n_rows == 0:
            return []
        cut = np.flatnonzero(self.dates[1:] != self.dates[:-1]) + 1
        edges = [0, *cut.tolist(), self.n_rows]
        return [slice(a, b) for a, b in zip(edges, edges[1:])]

    def take(self, mask: np.ndarray) -> "FactorPanel":
        """Row subset (boolean mask or sorted index array); clamp bounds are dropped."""
        return self.replace(
            dates=self.dates[mask], stocks=self.stocks[mask], values=self.values[mask],
            mktcap=self.mktcap[mask], industry=self.industry[mask], bounds=None,
        )

    def window(self, start, end) -> "FactorPanel":
        """Rows with ``start <= date <= end``."""
        start, end = np.datetime64(start, "D"), np.datetime64(end, "D")
        return self.take((self.dates >= start) & (self.dates <= end))

    def select(self, names: Sequence[str]) -> "FactorPanel":
        idx = [self.names.index(n) for n in names]
        return self.replace(names=tuple(names), values=self.values[:, idx], bounds=None)


def _require(panel: FactorPanel, stage: Stage, op: str) -> None:
    if panel.stage != stage:
        raise StageError(f"{op} needs a {stage.name.lower()} panel, got {panel.stage.name.lower()}")


def drop_null_rows(panel: FactorPanel) -> FactorPanel:
    _require(panel, Stage.RAW, "drop_null_rows")
    keep = ~np.isnan(panel.values).any(axis=1)
    if not keep.any():
        raise EmptyPanelError("every row contains a null factor value")
    return panel.take(keep).replace(stage=Stage.CLEANED)


def _cross_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1) if len(x) > 1 else np.zeros(x.shape[1])
    return mu, sd


def clip_to_bounds(panel: FactorPanel, bounds: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Clamp each cross-section of ``panel.values`` to stored per-date bounds."""
    lower, upper = bounds
    out = panel.values.copy()
    for i, sl in enumerate(panel.cross_sections()):
        out[sl] = np.clip(out[sl], lower[i], upper[i])
    return out


def winsorize_3sigma(panel: FactorPanel, n_sigma: float = 3.0) -> FactorPanel:
    """Clamp every (date, factor) cross-section to mean +/- 3 sample std."""
    _require(panel, Stage.CLEANED, "winsorize_3sigma")
    sections = panel.cross_sections()
    lower = np.empty((len(sections), panel.n_factors))
    upper = np.empty_like(lower)
    for i, sl in enumerate(sections):
        mu, sd = _cross_stats(panel.values[sl])
        lower[i] = mu - n_sigma * sd
        upper[i] = mu + n_sigma * sd
    bounds = (lower, upper)
    return panel.replace(values=clip_to_bounds(panel, bounds), stage=Stage.WINSORIZED, bounds=bounds)


def _industry_dummies(labels: np.ndarray) -> np.ndarray:
    levels = np.unique(labels)
    # first level is absorbed by the intercept
    return (labels[:, None] == levels[None, 1:]).astype(float)


def design_matrix(mktcap: np.ndarray, industry: np.ndarray, with_industry: bool = True) -> np.ndarray:
    cols = [np.ones(len(mktcap)), np.log(mktcap)]
    X = np.column_stack(cols)
    if with_industry:
        X = np.hstack([X, _industry_dummies(industry)])
    return X


def _usable(X: np.ndarray) -> bool:
    # a saturated fit (n == rank) leaves no residual degrees of freedom
    rank = np.linalg.matrix_rank(X)
    return rank == X.shape[1] and X.shape[0] > rank


def neutralize(panel: FactorPanel) -> FactorPanel:
    """Replace factor values by OLS residuals on [1, ln(mktcap), industry
    dummies], one regression per (date, factor)."""
    _require(panel, Stage.WINSORIZED, "neutralize")
    out = np.empty_like(panel.values)
    notes = list(panel.notes)
    for sl in panel.cross_sections():
        y = panel.values[sl]
        X = design_matrix(panel.mktcap[sl], panel.industry[sl])
        if not _usable(X):
            X = X[:, :2]
            msg = f"{panel.dates[sl.start]}: singular industry design, regressing on ln(mktcap) only"
            if not _usable(X):
                X = X[:, :1]
                msg = f"{panel.dates[sl.start]}: singular design, demeaning only"
            notes.append(msg)
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        out[sl] = y - X @ coef
    fallbacks = len(notes) - len(panel.notes)
    if fallbacks:
        warnings.warn(f"{fallbacks} cross-section(s) used a reduced design, first: {notes[len(panel.notes)]}",
                      NeutralizationWarning, stacklevel=2)
    return panel.replace(values=out, stage=Stage.NEUTRALIZED, notes=tuple(notes))


def zscore(panel: FactorPanel) -> FactorPanel:
    _require(panel, Stage.NEUTRALIZED, "zscore")
    out = np.zeros_like(panel.values)
    for sl in panel.cross_sections():
        mu, sd = _cross_stats(panel.values[sl])
        ok = sd > ZERO_STD
        out[sl, ok] = (panel.values[sl][:, ok] - mu[ok]) / sd[ok]
    return panel.replace(values=out, stage=Stage.STANDARDIZED)


def preprocess(panel: FactorPanel) -> FactorPanel:
    """Null deletion, 3-sigma clamp, neutralization, z-score."""
    return zscore(neutralize(winsorize_3sigma(drop_null_rows(panel))))


# ---------------------------------------------------------------------------
# Information coefficient
# ---------------------------------------------------------------------------

def forward_returns_by_date(panel: FactorPanel, dates: np.ndarray, close: np.ndarray) -> np.ndarray:
    """Per panel row, the return ``close[t+1]/close[t] - 1`` of a single
    series (e.g. the index) on the trading day after the row's date;
    NaN when unavailable."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    nxt = np.full(len(dates), np.nan)
    nxt[:-1] = close[1:] / close[:-1] - 1.0
    pos = np.searchsorted(dates, panel.dates)
    pos_c = np.minimum(pos, len(dates) - 1)
    hit = (pos < len(dates)) & (dates[pos_c] == panel.dates)
    return np.where(hit, nxt[pos_c], np.nan)


def forward_returns_by_stock(panel: FactorPanel, stocks: dict) -> np.ndarray:
    """Per panel row, the row's own stock return on the next trading day.
    ``stocks`` maps stock id to anything with ``dates`` and ``close``."""
    out = np.full(panel.n_rows, np.nan)
    for sid in np.unique(panel.stocks):
        if sid not in stocks:
            continue
        rows = np.flatnonzero(panel.stocks == sid)
        s = stocks[sid]
        out[rows] = forward_returns_by_date(panel.take(rows), s.dates, s.close)
    return out


@dataclass(frozen=True, eq=False)
class ICReport:
    names: tuple[str, ...]
    ic: np.ndarray
    rank: np.ndarray  # 1 = largest |IC|
    selected: tuple[str, ...]  # in rank order

    def rows(self) -> list[tuple[str, float, int, bool]]:
        order = np.argsort(self.rank)
        chosen = set(self.selected)
        return [(self.names[i], float(self.ic[i]), int(self.rank[i]), self.names[i] in chosen) for i in order]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["factor", "ic", "rank", "selected"])
            for name, ic, rank, sel in self.rows():
                w.writerow([name, repr(ic), rank, int(sel)])


def pearson_columns(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pearson correlation of each column of ``x`` with ``y``; 0 where
    either side is constant."""
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    num = xc.T @ yc
    den = np.sqrt((xc ** 2).sum(axis=0) * (yc ** 2).sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, num / den, 0.0)
    return np.clip(r, -1.0, 1.0)


def compute_ic(panel: FactorPanel, next_returns: np.ndarray, k: int = 6) -> ICReport:
    """Pooled Pearson IC of each factor against ``next_returns`` (one entry
    per panel row, NaN rows skipped); top-``k`` by |IC| are selected, ties
    broken by factor name."""
    _require(panel, Stage.STANDARDIZED, "compute_ic")
    next_returns = np.asarray(next_returns, dtype=float)
    if next_returns.shape != (panel.n_rows,):
        raise DimensionError("next_returns must have one entry per panel row")
    ok = np.isfinite(next_returns)
    if ok.sum() < 3:
        raise InsufficientDataError(f"need >= 3 paired observations, got {int(ok.sum())}")
    ic = pearson_columns(panel.values[ok], next_returns[ok])
    order = sorted(range(panel.n_factors), key=lambda j: (-abs(ic[j]), panel.names[j]))
    rank = np.empty(panel.n_factors, dtype=int)
    rank[order] = np.arange(1, panel.n_factors + 1)
    return ICReport(panel.names, ic, rank, tuple(panel.names[j] for j in order[:k]))


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PCAModel:
    mean: np.ndarray  # (k_in,)
    components: np.ndarray  # (k_out, k_in), rows are principal axes
    explained_ratio: np.ndarray  # (k_out,)

    @property
    def k_in(self) -> int:
        return self.components.shape[1]

    @property
    def k_out(self) -> int:
        return self.components.shape[0]

    def transform(self, rows: np.ndarray) -> np.ndarray:
        return pca_transform(self, rows)

    def inverse_transform(self, reduced: np.ndarray) -> np.ndarray:
        return np.asarray(reduced) @ self.components + self.mean


def pca_fit(rows: np.ndarray, k_out: int = 4) -> PCAModel:
    """Principal axes of the sample covariance of ``rows`` (observations x
    features), sorted by variance; each axis is signed so that its
    largest-magnitude entry is positive."""
    rows = np.asarray(rows, dtype=float)
    m, k_in = rows.shape
    if not 1 <= k_out <= k_in:
        raise DimensionError(f"k_out={k_out} must lie in [1, {k_in}]")
    if m < k_out + 1:
        raise InsufficientDataError(f"need >= {k_out + 1} observations, got {m}")
    mean = rows.mean(axis=0)
    cov = np.cov(rows - mean, rowvar=False, ddof=1).reshape(k_in, k_in)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order].T
    lead = np.argmax(np.abs(evecs), axis=1)
    evecs *= np.sign(evecs[np.arange(k_in), lead])[:, None]
    total = evals.sum()
    ratios = evals / total if total > 0 else np.zeros(k_in)
    return PCAModel(mean, evecs[:k_out].copy(), ratios[:k_out].copy())


def pca_transform(model: PCAModel, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if rows.shape[-1] != model.k_in:
        raise DimensionError(f"row width {rows.shape[-1]} != {model.k_in}")
    return (rows - model.mean) @ model.components.T
