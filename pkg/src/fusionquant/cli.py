"""Command-line driver.

Exit codes: 0 success, 2 bad config or arguments, 3 invalid input data,
4 output not writable, 5 insufficient history for the requested run.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .backtest import InsufficientHistoryError, MarketData, run_backtest
from .config import ConfigError, RunConfig, load_config
from .dataio import DataError, SyntheticMarket, compute_observables, generate_synthetic
from .factors import (
    FactorPanel, InsufficientDataError, StageError, compute_ic, forward_returns_by_date,
    forward_returns_by_stock, preprocess,
)
from .metrics import METRIC_FIELDS
from .neural import network_to_dict
from .picker import fit_picker
from .regime import DomainError as RegimeDomainError, fit_regime, write_state_path
from .strategy import PICKER_SEED_OFFSET, REGIME_SEED_OFFSET, FusionStrategy
from .svg import write_line_chart

log = logging.getLogger("fusionquant")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_HISTORY = 0, 2, 3, 4, 5


class CLIError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CLIError(f"output directory {out} is not writable: {exc}", EXIT_IO) from None
    return out


def load_market(cfg: RunConfig) -> tuple[MarketData, SyntheticMarket | None]:
    if cfg.data.index and cfg.data.stocks and cfg.data.factors:
        data = MarketData(
            dataio.load_bars(cfg.data.index, "index"),
            dataio.load_bars(cfg.data.stocks, "stock"),
            dataio.load_factor_panel(cfg.data.factors),
        )
        return data, None
    market = generate_synthetic(cfg.data.synthetic)
    return MarketData(market.index, market.stocks, market.factors), market


def _ic_returns(cfg: RunConfig, data: MarketData, panel: FactorPanel) -> np.ndarray:
    if cfg.preprocess.ic_target == "index":
        return forward_returns_by_date(panel, data.index.dates, data.index.close)
    return forward_returns_by_stock(panel, data.stocks)


def cmd_synth(cfg: RunConfig, args) -> list[Path]:
    if cfg.data.synthetic is None:
        raise CLIError("synth needs data.synthetic in the config", EXIT_CONFIG)
    out = _out_dir(cfg)
    market = generate_synthetic(cfg.data.synthetic)
    paths = [out / "index.csv", out / "stocks.csv", out / "factors.csv", out / "regimes.csv", out / "truth.json"]
    dataio.write_bars(market.index, paths[0])
    dataio.write_bars(market.stocks, paths[1])
    dataio.write_factor_panel(market.factors, paths[2])
    with paths[3].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "regime"])
        for d, r in zip(market.index.dates, market.regimes):
            w.writerow([str(d), int(r)])
    truth = {"signal_factors": list(market.signal_factors), "spec": cfg.data.synthetic.to_dict()}
    paths[4].write_text(json.dumps(truth, indent=2, sort_keys=True))
    return paths


def cmd_preprocess(cfg: RunConfig, args) -> list[Path]:
    out = _out_dir(cfg)
    data, _ = load_market(cfg)
    panel = preprocess(data.factors)
    path = out / "factors_standardized.csv"
    dataio.write_factor_panel(panel, path)
    for note in panel.notes:
        log.info(note)
    return [path]


def cmd_ic(cfg: RunConfig, args) -> list[Path]:
    out = _out_dir(cfg)
    data, _ = load_market(cfg)
    panel = preprocess(data.factors)
    k = args.k if getattr(args, "k", None) is not None else cfg.preprocess.k_select
    report = compute_ic(panel, _ic_returns(cfg, data, panel), k=k)
    path = out / "ic_report.csv"
    report.to_csv(path)
    return [path]


def cmd_train_picker(cfg: RunConfig, args) -> list[Path]:
    """Train on the last ``picker_train_window`` days with realized targets."""
    out = _out_dir(cfg)
    data, _ = load_market(cfg)
    panel = preprocess(data.factors)
    targets = forward_returns_by_stock(panel, data.stocks)
    known = np.unique(panel.dates[np.isfinite(targets)])
    window = known[-cfg.trade.picker_train_window:]
    mask = (panel.dates >= window[0]) & (panel.dates <= window[-1])
    model = fit_picker(panel.take(mask), targets[mask], _ic_returns(cfg, data, panel)[mask],
                       cfg.network, cfg.preprocess.k_select, cfg.swarm.replace(seed=cfg.seed + PICKER_SEED_OFFSET))
    doc = {
        "factors": list(model.factors),
        "pca": {"mean": model.pca.mean.tolist(), "components": model.pca.components.tolist(),
                "explained_ratio": model.pca.explained_ratio.tolist()},
        "network": network_to_dict(model.net, model.shape),
        "fitness_trace": model.trace,
        "train_dates": [str(window[0]), str(window[-1])],
    }
    path = out / "picker.json"
    path.write_text(json.dumps(doc, indent=2))
    return [path]


def cmd_train_regime(cfg: RunConfig, args) -> list[Path]:
    out = _out_dir(cfg)
    data, _ = load_market(cfg)
    obs = compute_observables(data.index)
    cal = dataio.TradingCalendar(data.index.dates)
    last = len(cal) - 1
    start = max(cal.months_back(last, cfg.trade.regime_train_window) - dataio.FDLR_LOOKBACK, 0)
    rows = slice(start, len(obs))
    close = data.index.close
    nxt = np.full(len(close), np.nan)
    nxt[:-1] = close[1:] / close[:-1] - 1.0
    model = fit_regime(obs.values[rows], nxt[dataio.FDLR_LOOKBACK:][rows], cfg.regime.n_states,
                       seed=cfg.seed + REGIME_SEED_OFFSET, restarts=cfg.regime.restarts, tol=cfg.regime.tol,
                       max_iter=cfg.regime.max_iter)
    paths = [out / "regime.json", out / "regime_states.csv"]
    model.save(paths[0])
    write_state_path(paths[1], obs.dates[rows], model.train_path, model.ranking)
    return paths


def cmd_backtest(cfg: RunConfig, args) -> list[Path]:
    out = _out_dir(cfg)
    data, _ = load_market(cfg)
    strategy = FusionStrategy(data, cfg.trade, cfg.strategy_config(), seed=cfg.seed)
    result = run_backtest(data, cfg.trade, seed=cfg.seed, strategy=strategy)
    paths = [out / "equity.csv", out / "fills.csv", out / "metrics.json", out / "equity.svg", out / "states.csv"]
    result.write_equity_csv(paths[0])
    result.write_fills_csv(paths[1])
    result.write_metrics_json(paths[2], cfg.name)
    write_line_chart(paths[3], [str(d) for d in result.dates],
                     {cfg.name: result.equity, "benchmark (index)": result.benchmark},
                     title=f"{cfg.name}: equity vs benchmark", x_label="trading day", y_label="equity")
    with paths[4].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "state", "rank", "signal"])
        for d, dec in zip(result.dates, result.decisions):
            w.writerow([str(d), dec.state, dec.rank, dec.signal.value])
    return paths


def _read_metrics(path: Path) -> tuple[str, dict]:
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"{path}: unreadable metrics JSON: {exc}", EXIT_DATA) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("metrics"), dict):
        raise CLIError(f"{path}: expected an object with a 'metrics' section", EXIT_DATA)
    return str(doc.get("name") or path.stem), doc["metrics"]


def build_report(inputs: list[Path]) -> tuple[list[str], list[list[str]]]:
    """Rows of (period, metric, value per strategy); strategies sorted by name."""
    named = sorted((_read_metrics(p) for p in inputs), key=lambda t: t[0])
    periods = sorted({p for _, m in named for p in m if p != "overall"})
    periods = (["overall"] if any("overall" in m for _, m in named) else []) + periods
    header = ["period", "metric", *(n for n, _ in named)]
    rows = []
    for period in periods:
        for field in METRIC_FIELDS:
            cells = []
            for _, m in named:
                v = (m.get(period) or {}).get(field)
                cells.append("n/a" if not isinstance(v, (int, float)) or isinstance(v, bool) else f"{v:.4f}")
            rows.append([period, field, *cells])
    return header, rows


def cmd_report(cfg: RunConfig | None, args) -> list[Path]:
    if not args.inputs:
        raise CLIError("report needs at least one metrics JSON", EXIT_CONFIG)
    header, rows = build_report([Path(p) for p in args.inputs])
    out = Path(args.out or (cfg.out_dir if cfg else "."))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError(str(exc), EXIT_IO) from None
    csv_path, txt_path = out / "report.csv", out / "report.txt"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(wd) for c, wd in zip(r, widths)).rstrip() for r in [header, *rows]]
    txt_path.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return [csv_path, txt_path]


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "ic": cmd_ic,
    "train-picker": cmd_train_picker,
    "train-regime": cmd_train_regime,
    "backtest": cmd_backtest,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusionquant", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "report", help="run config JSON")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--out", help="override the output directory")
        if name == "ic":
            p.add_argument("--k", type=int, help="number of factors to select")
        if name == "report":
            p.add_argument("inputs", nargs="*", help="metrics JSON files")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else None
        if cfg is not None:
            if args.seed is not None:
                cfg = cfg.replace(seed=args.seed)
            if args.out:
                cfg = cfg.replace(out_dir=args.out)
        written = COMMANDS[args.command](cfg, args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, StageError, InsufficientDataError, RegimeDomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InsufficientHistoryError as exc:
        print(f"insufficient history: {exc}", file=sys.stderr)
        return EXIT_HISTORY
    except PermissionError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    for p in written:
        log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
