"""Factor-based stock picking with a PSO-trained network, fused with
HMM market timing, plus a daily-bar backtester."""
from .backtest import MarketData, TradeParams, run_backtest
from .config import RunConfig, load_config
from .dataio import SyntheticSpec, generate_synthetic
from .factors import FactorPanel, compute_ic, pca_fit, preprocess
from .metrics import compute_metrics
from .neural import NetworkShape, SwarmConfig, forward, pso_minimize, pso_train
from .regime import baum_welch, boxcox_fit, forward_backward, viterbi

__version__ = "0.1.0"

__all__ = [
    "FactorPanel", "MarketData", "NetworkShape", "RunConfig", "SwarmConfig", "SyntheticSpec",
    "TradeParams", "baum_welch", "boxcox_fit", "compute_ic", "compute_metrics", "forward",
    "forward_backward", "generate_synthetic", "load_config", "pca_fit", "preprocess",
    "pso_minimize", "pso_train", "run_backtest", "viterbi",
]
