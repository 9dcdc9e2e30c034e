"""One-at-a-time hyperparameter sweep of the stock picker.

Trains on the first ``--train-days`` factor dates and scores RMSE/MAE on
the following ``--test-days`` dates, varying hidden width ``n``, PCA
components ``k``, activation slope ``a`` and the number of IC-selected
factors ``k_select`` around the configured defaults.

    python3 scripts/sweep_hyperparams.py configs/default.json
"""
from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

from fusionquant.cli import load_market
from fusionquant.config import load_config
from fusionquant.factors import forward_returns_by_date, forward_returns_by_stock, preprocess
from fusionquant.picker import PickerData, SearchPoint, hyperparameter_search

GRIDS = {"n": [3, 5, 8], "k": [2, 3, 4, 5], "a": [0.05, 0.1, 0.5, 1.0], "k_select": [4, 6, 8]}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--train-days", type=int, default=30)
    ap.add_argument("--test-days", type=int, default=20)
    ap.add_argument("--iterations", type=int, default=100, help="PSO iterations per fit")
    ap.add_argument("--out", default="out/sweep.csv")
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    data, _ = load_market(cfg)
    panel = preprocess(data.factors)
    own = forward_returns_by_stock(panel, data.stocks)
    index = forward_returns_by_date(panel, data.index.dates, data.index.close)
    ic = index if cfg.preprocess.ic_target == "index" else own

    dates = panel.unique_dates()
    split = dates[args.train_days]
    end = dates[min(args.train_days + args.test_days, len(dates) - 1)]

    def part(mask):
        return PickerData(panel.take(mask), own[mask], ic[mask], index[mask])

    train = part(panel.dates < split)
    test = part((panel.dates >= split) & (panel.dates < end))
    defaults = SearchPoint(cfg.network.n, cfg.network.k, cfg.network.a, cfg.preprocess.k_select)
    swarm = cfg.swarm.replace(i_max=args.iterations, seed=cfg.seed)
    res = hyperparameter_search(train, test, GRIDS, defaults, swarm)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["varied", "value", "n", "k", "a", "k_select", "rmse", "mae"])
        for name, value, p, r, m in res.table:
            w.writerow([name, "" if np.isnan(value) else value, p.n, p.k, p.a, p.k_select, f"{r:.6f}", f"{m:.6f}"])
            print(f"{name:>9} {'' if np.isnan(value) else value!s:>6}  rmse={r:.6f}  mae={m:.6f}")
    print(f"best: {res.best} (rmse {res.best_rmse:.6f}); table in {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
