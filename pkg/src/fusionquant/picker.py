"""Stock picker: IC-screened factors -> PCA -> swarm-trained network.

Also hosts the one-at-a-time hyperparameter sweep scored by RMSE/MAE on a
held-out date range.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .factors import FactorPanel, ICReport, PCAModel, Stage, StageError, compute_ic, pca_fit, pca_transform
from .neural import NetworkParams, NetworkShape, Pick, SwarmConfig, forward, mae, predict_and_pick, pso_train, rmse

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PickerModel:
    factors: tuple[str, ...]
    pca: PCAModel
    net: NetworkParams
    shape: NetworkShape
    ic: ICReport
    trace: list[float] = field(default_factory=list, repr=False)

    def reduce(self, panel: FactorPanel) -> np.ndarray:
        return pca_transform(self.pca, panel.select(self.factors).values)

    def score(self, panel: FactorPanel) -> np.ndarray:
        if panel.stage != Stage.STANDARDIZED:
            raise StageError("picker scores standardized panels only")
        return np.atleast_1d(forward(self.net, self.shape, self.reduce(panel)))

    def pick(self, panel: FactorPanel, n_pick: int = 3) -> Pick:
        """Pick from the cross-section of ``panel``'s latest date."""
        last = panel.take(panel.dates == panel.dates.max())
        return predict_and_pick(self.net, self.shape, list(last.stocks), self.reduce(last), n_pick)


def fit_picker(
    panel: FactorPanel,
    targets: np.ndarray,
    ic_returns: np.ndarray | None = None,
    shape: NetworkShape = NetworkShape(),
    k_select: int = 6,
    swarm: SwarmConfig = SwarmConfig(),
) -> PickerModel:
    """Train on the rows of a standardized ``panel`` whose next-day stock
    return ``targets`` is known. Factors are screened by IC against
    ``ic_returns`` (defaults to ``targets``)."""
    targets = np.asarray(targets, dtype=float)
    ic_returns = targets if ic_returns is None else np.asarray(ic_returns, dtype=float)
    if shape.k > k_select:
        raise ValueError(f"input nodes k={shape.k} exceed screened factor count {k_select}")
    report = compute_ic(panel, ic_returns, k=k_select)
    rows = np.isfinite(targets)
    X = panel.select(report.selected).values[rows]
    pca = pca_fit(X, shape.k)
    net, trace = pso_train(pca_transform(pca, X), targets[rows], shape, swarm)
    return PickerModel(report.selected, pca, net, shape, report, trace)


@dataclass(frozen=True, eq=False)
class PickerData:
    """Standardized panel rows with per-row forward returns.

    ``target`` trains the network (the stock's own next-day return),
    ``ic_target`` ranks factors, ``eval_target`` scores held-out
    predictions (the index's next-day return).
    """

    panel: FactorPanel
    target: np.ndarray
    ic_target: np.ndarray
    eval_target: np.ndarray


@dataclass(frozen=True)
class SearchPoint:
    n: int = 5
    k: int = 4
    a: float = 0.1
    k_select: int = 6

    @property
    def shape(self) -> NetworkShape:
        return NetworkShape(self.k, self.n, self.a)


@dataclass
class SearchResult:
    best: SearchPoint
    best_rmse: float
    table: list[tuple[str, float, SearchPoint, float, float]]  # (param, value, point, rmse, mae)


def prediction_errors(pred: np.ndarray, actual: np.ndarray) -> tuple[float, float]:
    """(RMSE, MAE) over all stock x date prediction terms."""
    return rmse(pred, actual), mae(pred, actual)


def hyperparameter_search(
    train: PickerData,
    test: PickerData,
    grids: dict[str, list],
    defaults: SearchPoint = SearchPoint(),
    swarm: SwarmConfig = SwarmConfig(),
) -> SearchResult:
    """Vary one hyperparameter at a time around ``defaults`` and keep the
    candidate with the lowest held-out RMSE (first evaluated wins ties)."""
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ValueError("hyperparameter grids must be non-empty")
    unknown = set(grids) - {"n", "k", "a", "k_select"}
    if unknown:
        raise ValueError(f"unknown hyperparameters {sorted(unknown)}")
    candidates: list[tuple[str, float, SearchPoint]] = [("default", float("nan"), defaults)]
    for name, values in grids.items():
        for v in values:
            point = SearchPoint(**{**defaults.__dict__, name: v})
            if point != defaults:
                candidates.append((name, v, point))

    table = []
    best, best_rmse = defaults, np.inf
    for name, value, point in candidates:
        if point.k > point.k_select:
            log.info("skipping %s: k > k_select", point)
            continue
        model = fit_picker(train.panel, train.target, train.ic_target, point.shape, point.k_select, swarm)
        pred = model.score(test.panel)
        ok = np.isfinite(test.eval_target)
        err_rmse, err_mae = prediction_errors(pred[ok], test.eval_target[ok])
        table.append((name, value, point, err_rmse, err_mae))
        if err_rmse < best_rmse:
            best, best_rmse = point, err_rmse
    return SearchResult(best, best_rmse, table)

