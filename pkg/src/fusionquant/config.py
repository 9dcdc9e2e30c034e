"""Single JSON run configuration shared by every CLI command."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .backtest import TradeParams
from .dataio import SyntheticSpec
from .neural import NetworkShape, SwarmConfig
from .strategy import StrategyConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    index: str | None = None
    stocks: str | None = None
    factors: str | None = None
    synthetic: SyntheticSpec | None = None

    def __post_init__(self):
        paths = (self.index, self.stocks, self.factors)
        if self.synthetic is None and not all(paths):
            raise ConfigError("data needs index/stocks/factors paths or a synthetic spec")


@dataclass(frozen=True)
class PreprocessConfig:
    k_select: int = 6
    ic_target: str = "stock"


@dataclass(frozen=True)
class RegimeConfig:
    n_states: int = 5
    restarts: int = 5
    tol: float = 1e-6
    max_iter: int = 500


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig
    seed: int = 0
    out_dir: str = "out"
    name: str = "fusion"
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    network: NetworkShape = field(default_factory=NetworkShape)
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    regime: RegimeConfig = field(default_factory=RegimeConfig)
    trade: TradeParams = field(default_factory=TradeParams)

    def strategy_config(self) -> StrategyConfig:
        return StrategyConfig(
            shape=self.network, swarm=self.swarm, k_select=self.preprocess.k_select,
            ic_target=self.preprocess.ic_target, n_states=self.regime.n_states,
            restarts=self.regime.restarts, tol=self.regime.tol, max_iter=self.regime.max_iter,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "preprocess": PreprocessConfig,
    "network": NetworkShape,
    "swarm": SwarmConfig,
    "regime": RegimeConfig,
    "trade": TradeParams,
}


def _build(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(d: dict, base_dir: str | Path = ".") -> RunConfig:
    """Build a :class:`RunConfig`; relative data paths and ``out_dir``
    resolve against ``base_dir``."""
    if not isinstance(d, dict) or "data" not in d:
        raise ConfigError("config must be an object with a 'data' section")
    base_dir = Path(base_dir)
    raw = dict(d["data"])
    if raw.get("synthetic") is not None:
        raw["synthetic"] = _build(SyntheticSpec, raw["synthetic"], "data.synthetic")
    for key in ("index", "stocks", "factors"):
        if raw.get(key):
            raw[key] = str(base_dir / raw[key])
    kwargs = {"data": _build(DataConfig, raw, "data")}
    for key in ("seed", "out_dir", "name"):
        if key in d:
            kwargs[key] = d[key]
    if "out_dir" in kwargs:
        kwargs["out_dir"] = str(base_dir / kwargs["out_dir"])
    for key, cls in _SECTIONS.items():
        if key in d:
            kwargs[key] = _build(cls, d[key], key)
    unknown = set(d) - {"data", "seed", "out_dir", "name", *_SECTIONS}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    if not isinstance(kwargs.get("seed", 0), int):
        raise ConfigError("seed must be an integer")
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(d, path.parent)
