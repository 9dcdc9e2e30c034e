import importlib.util
import json
from pathlib import Path

SCRIPTS = Path(__file__).resolve().parents[1] / "scripts"
SMALL = {
    "seed": 2,
    "data": {"synthetic": {"seed": 4, "n_days": 330, "n_stocks": 12,
                           "regimes": [{"drift": 0.002, "volatility": 0.008, "duration": 60},
                                       {"drift": -0.002, "volatility": 0.02, "duration": 60}]}},
    "swarm": {"i_max": 20},
    "regime": {"restarts": 1},
    "trade": {"regime_train_window": 6},
}


def load(name):
    spec = importlib.util.spec_from_file_location(name, SCRIPTS / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def test_pso_benchmark_runs(capsys):
    assert load("pso_benchmark").main(["--dims", "2", "--runs", "1", "--iterations", "10"]) == 0
    assert capsys.readouterr().out.count("reciprocal") == 3


def test_sweep_and_experiment_run(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert load("sweep_hyperparams").main([str(cfg), "--iterations", "5", "--out", str(tmp_path / "s.csv")]) == 0
    assert (tmp_path / "s.csv").read_text().startswith("varied,value")
    assert load("run_experiment").main([str(cfg), "--out", str(tmp_path / "exp")]) == 0
    summary = json.loads((tmp_path / "exp" / "summary.json").read_text())
    assert summary["picker_only"]["long_fraction"] == 1.0
    assert set(summary) == {"fusion", "picker_only", "benchmark"}
