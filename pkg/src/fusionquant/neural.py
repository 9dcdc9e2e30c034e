"""k -> n -> 1 feedforward scorer trained by particle swarm optimization.

The network output is ``A(q . (W x + h) + o1)`` with
``A(z) = 0.1 * (exp(a z) - 1) / (exp(a z) + 1)``: the hidden layer is
linear and only the output sum is squashed.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

OUTPUT_SCALE = 0.1


@dataclass(frozen=True)
class NetworkShape:
    k: int = 4  # input nodes
    n: int = 5  # hidden nodes
    a: float = 0.1  # activation steepness

    def __post_init__(self):
        if self.k < 1 or self.n < 1 or not self.a > 0:
            raise ValueError(f"invalid network shape {self}")

    @property
    def n_params(self) -> int:
        return self.n * self.k + 2 * self.n + 1


@dataclass(frozen=True, eq=False)
class NetworkParams:
    w: np.ndarray  # (n, k) input -> hidden weights
    h: np.ndarray  # (n,) hidden biases
    q: np.ndarray  # (n,) hidden -> output weights
    o1: float  # output bias

    @classmethod
    def zeros(cls, shape: NetworkShape) -> "NetworkParams":
        return cls(np.zeros((shape.n, shape.k)), np.zeros(shape.n), np.zeros(shape.n), 0.0)


def activation(x, a: float = 0.1):
    """Odd, bounded in (-0.1, 0.1). Written via tanh(a x / 2), which is the
    same function and never overflows."""
    return OUTPUT_SCALE * np.tanh(0.5 * a * np.asarray(x, dtype=float))


def activation_derivative(x, a: float = 0.1):
    t = np.tanh(0.5 * a * np.asarray(x, dtype=float))
    return OUTPUT_SCALE * 0.5 * a * (1.0 - t * t)


def encode(net: NetworkParams) -> np.ndarray:
    """Flatten to a particle position: w row-major, h, q, o1."""
    return np.concatenate([np.ravel(net.w), net.h, net.q, [net.o1]]).astype(float)


def decode(position: np.ndarray, shape: NetworkShape) -> NetworkParams:
    position = np.asarray(position, dtype=float)
    if position.shape != (shape.n_params,):
        raise ValueError(f"position length {position.shape} != ({shape.n_params},)")
    n, k = shape.n, shape.k
    w = position[: n * k].reshape(n, k)
    h = position[n * k: n * k + n]
    q = position[n * k + n: n * k + 2 * n]
    return NetworkParams(w.copy(), h.copy(), q.copy(), float(position[-1]))


def pre_activation(net: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    return (inputs @ net.w.T + net.h) @ net.q + net.o1


def forward(net: NetworkParams, shape: NetworkShape, inputs: np.ndarray):
    """Network output for one input vector (returns float) or a batch of
    rows (returns an array)."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape[-1] != shape.k or net.w.shape != (shape.n, shape.k):
        raise ValueError(f"input width {inputs.shape[-1]} / weights {net.w.shape} do not match {shape}")
    out = activation(pre_activation(net, inputs), shape.a)
    return float(out) if inputs.ndim == 1 else out


def forward_gradient(net: NetworkParams, shape: NetworkShape, x: np.ndarray) -> np.ndarray:
    """d forward / d position, in :func:`encode` order."""
    x = np.asarray(x, dtype=float)
    hidden = net.w @ x + net.h
    g = activation_derivative(hidden @ net.q + net.o1, shape.a)
    return g * np.concatenate([np.outer(net.q, x).ravel(), net.q, hidden, [1.0]])


def _batch_forward(positions: np.ndarray, shape: NetworkShape, X: np.ndarray) -> np.ndarray:
    """Outputs for many particles at once: (P, M) x (d, k) -> (P, d)."""
    n, k = shape.n, shape.k
    P = positions.shape[0]
    w = positions[:, : n * k].reshape(P, n, k)
    h = positions[:, n * k: n * k + n]
    q = positions[:, n * k + n: n * k + 2 * n]
    o1 = positions[:, -1]
    # linear hidden layer: q.(W x + h) + o1 == (W^T q).x + (q.h + o1)
    slope = np.matmul(q[:, None, :], w)[:, 0, :]  # (P, k)
    bias = np.sum(q * h, axis=1) + o1
    return activation(slope @ X.T + bias[:, None], shape.a)


def _exact_mean(x: np.ndarray) -> float:
    # compensated mean with one refinement step: a constant array returns
    # its value exactly rather than within an ulp
    m = math.fsum(x) / len(x)
    return m + math.fsum(x - m) / len(x)


def rmse(pred: np.ndarray, target: np.ndarray) -> float:
    diff = np.ravel(np.asarray(pred, dtype=float) - np.asarray(target, dtype=float))
    return math.sqrt(_exact_mean(diff * diff))


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    diff = np.ravel(np.asarray(pred, dtype=float) - np.asarray(target, dtype=float))
    return _exact_mean(np.abs(diff))


def fitness(position: np.ndarray, X: np.ndarray, y: np.ndarray, shape: NetworkShape) -> float:
    """RMSE of the decoded network on the samples ``(X[t], y[t])``."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise ValueError("fitness needs at least one sample")
    return rmse(forward(decode(position, shape), shape, X.reshape(len(X), -1)), y)


def network_objective(X: np.ndarray, y: np.ndarray, shape: NetworkShape) -> Callable[[np.ndarray], np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) == 0:
        raise ValueError("training needs at least one sample")

    def objective(positions: np.ndarray) -> np.ndarray:
        err = _batch_forward(positions, shape, X) - y[None, :]
        return np.sqrt(np.mean(err * err, axis=1))

    return objective


# ---------------------------------------------------------------------------
# Particle swarm
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SwarmConfig:
    c1: float = 1.5
    c2: float = 1.5
    w_max: float = 0.9
    w_min: float = 0.4
    i_max: int = 300
    ps: int = 100
    p_max: float = 3.0
    p_min: float = -3.0
    v_max: float = 0.1
    v_min: float = -0.1
    amp: float = 0.2
    seed: int = 0
    inertia_mode: str = "linear"  # or "reciprocal": w_max - span / iteration
    patience: int = 50
    min_improvement: float = 1e-10

    def __post_init__(self):
        if self.w_max < self.w_min:
            raise ValueError("w_max must be >= w_min")
        if self.p_max <= self.p_min or self.v_max <= self.v_min:
            raise ValueError("position/velocity bounds must be ordered")
        if self.ps < 2 or self.i_max < 1:
            raise ValueError("need ps >= 2 and i_max >= 1")
        if not 0.0 <= self.amp <= 1.0:
            raise ValueError("amp must lie in [0, 1]")
        if self.inertia_mode not in ("linear", "reciprocal"):
            raise ValueError(f"unknown inertia_mode {self.inertia_mode!r}")

    def replace(self, **changes) -> "SwarmConfig":
        return dataclasses.replace(self, **changes)


def inertia(iteration: int, config: SwarmConfig) -> float:
    if not 1 <= iteration <= config.i_max:
        raise ValueError(f"iteration {iteration} outside [1, {config.i_max}]")
    span = config.w_max - config.w_min
    if config.inertia_mode == "reciprocal":
        return config.w_max - span / iteration
    return config.w_max - span * iteration / config.i_max


@dataclass
class Swarm:
    x: np.ndarray  # (ps, M) positions
    v: np.ndarray  # (ps, M) velocities
    pbest: np.ndarray
    pbest_fit: np.ndarray
    gbest: np.ndarray
    gbest_fit: float


@dataclass
class SwarmResult:
    best_position: np.ndarray
    best_fitness: float
    trace: list[float]  # gbest fitness after each iteration
    iterations: int
    history: list[Swarm] = field(default_factory=list, repr=False)


def mutate(x: np.ndarray, rng: np.random.Generator, config: SwarmConfig) -> None:
    """Adaptive mutation: each particle, with probability ``amp``, has one
    uniformly chosen coordinate redrawn uniformly within the position bounds."""
    ps, M = x.shape
    hit = rng.random(ps) < config.amp
    coord = rng.integers(M, size=ps)
    fresh = rng.uniform(config.p_min, config.p_max, size=ps)
    rows = np.flatnonzero(hit)
    x[rows, coord[rows]] = fresh[rows]


def pso_minimize(
    objective: Callable[[np.ndarray], np.ndarray],
    dim: int,
    config: SwarmConfig = SwarmConfig(),
    keep_history: bool = False,
) -> SwarmResult:
    """Minimize ``objective`` (maps a (ps, dim) array to ps fitness values)."""
    rng = np.random.default_rng(config.seed)
    x = rng.uniform(config.p_min, config.p_max, size=(config.ps, dim))
    v = rng.uniform(config.v_min, config.v_max, size=(config.ps, dim))
    fit = np.asarray(objective(x), dtype=float)
    best = int(np.argmin(fit))
    swarm = Swarm(x, v, x.copy(), fit.copy(), x[best].copy(), float(fit[best]))
    trace: list[float] = []
    history: list[Swarm] = []
    stall = 0
    it = 0
    for it in range(1, config.i_max + 1):
        c = inertia(it, config)
        r1 = rng.random(config.ps)[:, None]
        r2 = rng.random(config.ps)[:, None]
        swarm.v = (
            c * swarm.v
            + r1 * config.c1 * (swarm.pbest - swarm.x)
            + r2 * config.c2 * (swarm.gbest[None, :] - swarm.x)
        )
        np.clip(swarm.v, config.v_min, config.v_max, out=swarm.v)
        swarm.x = swarm.x + swarm.v
        np.clip(swarm.x, config.p_min, config.p_max, out=swarm.x)
        mutate(swarm.x, rng, config)

        fit = np.asarray(objective(swarm.x), dtype=float)
        better = fit < swarm.pbest_fit
        swarm.pbest[better] = swarm.x[better]
        swarm.pbest_fit[better] = fit[better]
        best = int(np.argmin(swarm.pbest_fit))
        previous = swarm.gbest_fit
        if swarm.pbest_fit[best] < swarm.gbest_fit:
            swarm.gbest = swarm.pbest[best].copy()
            swarm.gbest_fit = float(swarm.pbest_fit[best])
        trace.append(swarm.gbest_fit)
        if keep_history:
            history.append(dataclasses.replace(
                swarm, x=swarm.x.copy(), v=swarm.v.copy(), pbest=swarm.pbest.copy(),
                pbest_fit=swarm.pbest_fit.copy(), gbest=swarm.gbest.copy(),
            ))

        stall = stall + 1 if previous - swarm.gbest_fit < config.min_improvement else 0
        if stall >= config.patience:
            break
    return SwarmResult(swarm.gbest.copy(), swarm.gbest_fit, trace, it, history)


def pso_train(
    X: np.ndarray, y: np.ndarray, shape: NetworkShape = NetworkShape(), config: SwarmConfig = SwarmConfig()
) -> tuple[NetworkParams, list[float]]:
    """Fit network weights to ``(X, y)`` by minimizing RMSE with the swarm."""
    result = pso_minimize(network_objective(X, y, shape), shape.n_params, config)
    return decode(result.best_position, shape), result.trace


# ---------------------------------------------------------------------------
# Picking and serialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pick:
    stocks: tuple[str, ...]
    scores: tuple[float, ...]
    short: bool = False  # fewer candidates than requested


def predict_and_pick(
    net: NetworkParams, shape: NetworkShape, stock_ids: Sequence[str], rows: np.ndarray, n_pick: int = 3
) -> Pick:
    """Highest-scoring ``n_pick`` stocks; equal scores go to the smaller id."""
    if n_pick < 1:
        raise ValueError("n_pick must be >= 1")
    rows = np.asarray(rows, dtype=float).reshape(len(stock_ids), -1)
    scores = np.atleast_1d(forward(net, shape, rows)) if len(stock_ids) else np.empty(0)
    order = sorted(range(len(stock_ids)), key=lambda i: (-scores[i], stock_ids[i]))[:n_pick]
    short = len(stock_ids) < n_pick
    if short:
        log.warning("only %d candidate stocks for n_pick=%d", len(stock_ids), n_pick)
    return Pick(tuple(stock_ids[i] for i in order), tuple(float(scores[i]) for i in order), short)


def network_to_dict(net: NetworkParams, shape: NetworkShape) -> dict:
    return {"k": shape.k, "n": shape.n, "a": shape.a, "params": encode(net).tolist()}


def network_from_dict(d: dict) -> tuple[NetworkParams, NetworkShape]:
    shape = NetworkShape(int(d["k"]), int(d["n"]), float(d["a"]))
    return decode(np.array(d["params"], dtype=float), shape), shape


def save_network(net: NetworkParams, shape: NetworkShape, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net, shape), indent=2))


def load_network(path: str | Path) -> tuple[NetworkParams, NetworkShape]:
    return network_from_dict(json.loads(Path(path).read_text()))
