"""Box-Cox normalization and a diagonal-Gaussian hidden Markov model for
market-state timing.

Inference uses per-step normalized (scaled) forward/backward recursions;
Viterbi runs in log space. The inner loops are compiled with numba.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy.cluster.vq import kmeans2

log = logging.getLogger(__name__)

COV_FLOOR = 1e-6
BOXCOX_EPS = 1e-6
BOXCOX_GRID = np.round(np.arange(-500, 501) * 0.01, 2)
LOG_2PI = float(np.log(2.0 * np.pi))
LAMBDA_ZERO = 1e-12  # |lambda| below this uses the log branch


class DomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Box-Cox
# ---------------------------------------------------------------------------

def boxcox_raw(x: np.ndarray, lam: float) -> np.ndarray:
    """``(x**lam - 1)/lam``, or ``ln x`` at ``lam == 0``; ``x`` must be > 0."""
    x = np.asarray(x, dtype=float)
    if abs(lam) < LAMBDA_ZERO:
        return np.log(x)
    return np.expm1(lam * np.log(x)) / lam


def boxcox_raw_inverse(y: np.ndarray, lam: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if abs(lam) < LAMBDA_ZERO:
        return np.exp(y)
    return np.exp(np.log1p(lam * y) / lam)


def boxcox_profile_llf(x: np.ndarray, lambdas: np.ndarray = BOXCOX_GRID) -> np.ndarray:
    """Profile log-likelihood of the Box-Cox normal model at each lambda."""
    x = np.asarray(x, dtype=float)
    logx = np.log(x)
    centre = logx.mean()
    out = np.empty(len(lambdas))
    for i, lam in enumerate(lambdas):
        # var((x^l - 1)/l) = var(exp(l (ln x - c))) * exp(2 l c) / l^2, free of cancellation
        if abs(lam) < LAMBDA_ZERO:
            log_var = np.log(np.var(logx))
        else:
            v = np.var(np.exp(lam * (logx - centre)))
            log_var = np.log(v) + 2.0 * lam * centre - 2.0 * np.log(abs(lam)) if v > 0 else -np.inf
        out[i] = -0.5 * len(x) * log_var + (lam - 1.0) * logx.sum() if np.isfinite(log_var) else -np.inf
    return out


@dataclass(frozen=True, eq=False)
class BoxCoxTransform:
    """Per-variable shift, power transform and standardization.

    The power step is evaluated as ``expm1(lam (ln x - c)) / lam`` with
    ``c`` the mean log of the fit data. This is an affine image of
    ``(x**lam - 1)/lam``, so the standardized output is the same, but it
    does not collapse to a constant when ``x**lam`` is tiny or huge next
    to 1 (volume-sized inputs at extreme lambda).
    """

    lambdas: np.ndarray
    shifts: np.ndarray
    means: np.ndarray  # of the centred power-transformed data
    stds: np.ndarray
    identity: np.ndarray  # bool per variable: constant at fit time, passed through
    centres: np.ndarray  # mean log of the shifted fit data

    def apply(self, rows: np.ndarray, clip: bool = False) -> np.ndarray:
        return boxcox_apply(self, rows, clip)

    def invert(self, rows: np.ndarray) -> np.ndarray:
        return boxcox_invert(self, rows)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("lambdas", "shifts", "means", "stds", "identity", "centres")}

    @classmethod
    def from_dict(cls, d: dict) -> "BoxCoxTransform":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("lambdas", "shifts", "means", "stds")),
                   np.asarray(d["identity"], dtype=bool), np.asarray(d["centres"], dtype=float))


def _power(xs: np.ndarray, lam: float, centre: float) -> np.ndarray:
    z = np.log(xs) - centre
    return z if abs(lam) < LAMBDA_ZERO else np.expm1(lam * z) / lam


def _power_inverse(u: np.ndarray, lam: float, centre: float) -> np.ndarray:
    if abs(lam) < LAMBDA_ZERO:
        return np.exp(u + centre)
    return np.exp(centre + np.log1p(lam * u) / lam)


def boxcox_fit(data: np.ndarray, eps: float = BOXCOX_EPS, lambdas: np.ndarray = BOXCOX_GRID) -> BoxCoxTransform:
    """Per column: shift to strictly positive, pick lambda on the grid by
    profile likelihood, then standardize the transformed column."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    T, D = data.shape
    if T < 20:
        raise ValueError(f"Box-Cox fit needs >= 20 observations per variable, got {T}")
    lam = np.ones(D)
    shift = np.zeros(D)
    mean = np.zeros(D)
    std = np.ones(D)
    ident = np.zeros(D, dtype=bool)
    centre = np.zeros(D)
    for j in range(D):
        x = data[:, j]
        if np.ptp(x) == 0:
            warnings.warn(f"column {j} is constant; Box-Cox left as identity", RuntimeWarning, stacklevel=2)
            ident[j] = True
            continue
        shift[j] = max(0.0, eps - x.min())
        xs = x + shift[j]
        llf = boxcox_profile_llf(xs, lambdas)
        lam[j] = float(lambdas[int(np.argmax(llf))])
        centre[j] = np.log(xs).mean()
        y = _power(xs, lam[j], centre[j])
        mean[j] = y.mean()
        std[j] = y.std()
        if not std[j] > 0:
            warnings.warn(f"column {j} collapses under lambda={lam[j]}; Box-Cox left as identity",
                          RuntimeWarning, stacklevel=2)
            lam[j], shift[j], centre[j], mean[j], std[j], ident[j] = 1.0, 0.0, 0.0, 0.0, 1.0, True
    return BoxCoxTransform(lam, shift, mean, std, ident, centre)


def boxcox_apply(t: BoxCoxTransform, rows: np.ndarray, clip: bool = False) -> np.ndarray:
    """Transform and standardize. Out-of-sample values at or below the
    fitted shift raise :class:`DomainError` unless ``clip`` floors them
    at the shift epsilon."""
    rows = np.asarray(rows, dtype=float)
    x = rows.reshape(-1, len(t.lambdas))
    out = np.empty_like(x)
    centres = t.centres
    for j in range(x.shape[1]):
        if t.identity[j]:
            out[:, j] = x[:, j]
            continue
        xs = x[:, j] + t.shifts[j]
        if np.any(xs <= 0):
            if not clip:
                raise DomainError(f"column {j}: shifted value <= 0")
            xs = np.maximum(xs, BOXCOX_EPS)
        out[:, j] = (_power(xs, t.lambdas[j], centres[j]) - t.means[j]) / t.stds[j]
    return out.reshape(rows.shape)


def boxcox_invert(t: BoxCoxTransform, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    y = rows.reshape(-1, len(t.lambdas))
    out = np.empty_like(y)
    centres = t.centres
    for j in range(y.shape[1]):
        if t.identity[j]:
            out[:, j] = y[:, j]
        else:
            out[:, j] = _power_inverse(y[:, j] * t.stds[j] + t.means[j], t.lambdas[j], centres[j]) - t.shifts[j]
    return out.reshape(rows.shape)


# ---------------------------------------------------------------------------
# Gaussian HMM
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MGHMMParams:
    pi: np.ndarray  # (N,)
    trans: np.ndarray  # (N, N), rows sum to 1
    means: np.ndarray  # (N, D)
    covs: np.ndarray  # (N, D) diagonal variances

    def __post_init__(self):
        N = len(self.pi)
        if self.trans.shape != (N, N) or self.means.shape[0] != N or self.covs.shape != self.means.shape:
            raise ValueError("inconsistent HMM parameter shapes")
        if np.any(self.covs <= 0):
            raise ValueError("diagonal variances must be > 0")

    @property
    def n_states(self) -> int:
        return len(self.pi)

    def permuted(self, perm: np.ndarray) -> "MGHMMParams":
        """Relabel states: new state ``i`` is old state ``perm[i]``."""
        perm = np.asarray(perm)
        return MGHMMParams(self.pi[perm], self.trans[np.ix_(perm, perm)], self.means[perm], self.covs[perm])

    def to_dict(self) -> dict:
        return {"pi": self.pi.tolist(), "trans": self.trans.tolist(),
                "means": self.means.tolist(), "covs": self.covs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MGHMMParams":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("pi", "trans", "means", "covs")))


def log_emissions(params: MGHMMParams, obs: np.ndarray) -> np.ndarray:
    """(T, N) log densities of each observation row under each state."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    diff = obs[:, None, :] - params.means[None, :, :]
    return -0.5 * (np.sum(np.log(params.covs) + LOG_2PI, axis=1)[None, :]
                   + np.sum(diff * diff / params.covs[None, :, :], axis=2))


def log_emission(params: MGHMMParams, state: int, obs: np.ndarray) -> float:
    return float(log_emissions(params, np.asarray(obs, dtype=float)[None, :])[0, state])


@njit(cache=True)
def _forward_scaled(pi, A, B):
    T, N = B.shape
    alpha = np.empty((T, N))
    c = np.empty(T)
    s = 0.0
    for j in range(N):
        alpha[0, j] = pi[j] * B[0, j]
        s += alpha[0, j]
    c[0] = s
    for j in range(N):
        alpha[0, j] /= s
    for t in range(1, T):
        s = 0.0
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc += alpha[t - 1, i] * A[i, j]
            alpha[t, j] = acc * B[t, j]
            s += alpha[t, j]
        c[t] = s
        for j in range(N):
            alpha[t, j] /= s
    return alpha, c


@njit(cache=True)
def _backward_scaled(A, B, c):
    T, N = B.shape
    beta = np.empty((T, N))
    for i in range(N):
        beta[T - 1, i] = 1.0
    for t in range(T - 2, -1, -1):
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += A[i, j] * B[t + 1, j] * beta[t + 1, j]
            beta[t, i] = acc / c[t + 1]
    return beta


@njit(cache=True)
def _viterbi_log(log_pi, log_A, log_B):
    T, N = log_B.shape
    delta = np.empty((T, N))
    back = np.zeros((T, N), dtype=np.int64)
    for j in range(N):
        delta[0, j] = log_pi[j] + log_B[0, j]
    for t in range(1, T):
        for j in range(N):
            best = -np.inf
            arg = 0
            for i in range(N):
                v = delta[t - 1, i] + log_A[i, j]
                if v > best:  # strict: ties keep the lower index
                    best = v
                    arg = i
            delta[t, j] = best + log_B[t, j]
            back[t, j] = arg
    path = np.empty(T, dtype=np.int64)
    best = -np.inf
    arg = 0
    for j in range(N):
        if delta[T - 1, j] > best:
            best = delta[T - 1, j]
            arg = j
    path[T - 1] = arg
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, best


@dataclass(frozen=True, eq=False)
class Posterior:
    loglik: float
    gamma: np.ndarray  # (T, N)
    xi: np.ndarray  # (T-1, N, N)


def forward_backward(params: MGHMMParams, obs: np.ndarray) -> Posterior:
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    logB = log_emissions(params, obs)
    shift = logB.max(axis=1)
    B = np.exp(logB - shift[:, None])
    alpha, c = _forward_scaled(params.pi, params.trans, B)
    beta = _backward_scaled(params.trans, B, c)
    loglik = float(np.sum(np.log(c)) + np.sum(shift))
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi = alpha[:-1, :, None] * params.trans[None, :, :] * (B[1:] * beta[1:])[:, None, :] / c[1:, None, None]
    if len(xi):
        xi /= xi.sum(axis=(1, 2), keepdims=True)
    return Posterior(loglik, gamma, xi)


def _safe_log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x)


def viterbi(params: MGHMMParams, obs: np.ndarray) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    path, _ = _viterbi_log(_safe_log(params.pi), _safe_log(params.trans), log_emissions(params, obs))
    return path


def path_log_prob(params: MGHMMParams, obs: np.ndarray, path: np.ndarray) -> float:
    """Joint log probability of ``obs`` and a given state path."""
    path = np.asarray(path)
    logB = log_emissions(params, obs)
    lp = _safe_log(params.pi[path[0]]) + logB[0, path[0]]
    lp += np.sum(_safe_log(params.trans[path[:-1], path[1:]]))
    lp += np.sum(logB[np.arange(1, len(path)), path[1:]])
    return float(lp)


def _initial_params(obs: np.ndarray, n_states: int, rng: np.random.Generator, cov_floor: float) -> MGHMMParams:
    T, D = obs.shape
    global_var = np.maximum(obs.var(axis=0), cov_floor)
    if n_states == 1:
        means = obs.mean(axis=0, keepdims=True)
        covs = global_var[None, :].copy()
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            centroids, labels = kmeans2(obs, n_states, minit="++", seed=rng)
        means = np.empty((n_states, D))
        covs = np.empty((n_states, D))
        for j in range(n_states):
            members = obs[labels == j]
            if len(members) >= 2:
                means[j] = members.mean(axis=0)
                covs[j] = np.maximum(members.var(axis=0), cov_floor)
            else:
                means[j] = obs[rng.integers(T)]
                covs[j] = global_var
    stay = 0.9 if n_states > 1 else 1.0
    trans = np.full((n_states, n_states), (1.0 - stay) / max(n_states - 1, 1))
    np.fill_diagonal(trans, stay)
    return MGHMMParams(np.full(n_states, 1.0 / n_states), trans, means, covs)


def m_step(obs: np.ndarray, post: Posterior, prev: MGHMMParams, cov_floor: float = COV_FLOOR) -> MGHMMParams:
    gamma, xi = post.gamma, post.xi
    weight = gamma.sum(axis=0)
    alive = weight > 1e-10
    pi = gamma[0] / gamma[0].sum()
    flow = xi.sum(axis=0)
    out_flow = flow.sum(axis=1)
    trans = prev.trans.copy()
    has_flow = out_flow > 1e-300
    trans[has_flow] = flow[has_flow] / out_flow[has_flow, None]
    means = prev.means.copy()
    covs = prev.covs.copy()
    means[alive] = (gamma[:, alive].T @ obs) / weight[alive, None]
    for j in np.flatnonzero(alive):
        diff = obs - means[j]
        covs[j] = np.maximum(gamma[:, j] @ (diff * diff) / weight[j], cov_floor)
    return MGHMMParams(pi, trans, means, covs)


def _em(obs, params, tol, max_iter, cov_floor):
    trace = []
    for _ in range(max_iter):
        post = forward_backward(params, obs)
        trace.append(post.loglik)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            return params, trace
        params = m_step(obs, post, params, cov_floor)
    trace.append(forward_backward(params, obs).loglik)
    return params, trace


def baum_welch(
    obs: np.ndarray,
    n_states: int = 5,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 500,
    restarts: int = 5,
    cov_floor: float = COV_FLOOR,
) -> tuple[MGHMMParams, list[float]]:
    """EM fit from ``restarts`` seeded k-means initializations; returns the
    restart with the highest final log-likelihood and its trace."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if obs.size == 0:
        raise ValueError("empty observation set")
    if len(obs) < 10 * n_states:
        raise ValueError(f"need >= {10 * n_states} observations for {n_states} states, got {len(obs)}")
    best = None
    for r in range(max(restarts, 1)):
        rng = np.random.default_rng([seed, r])
        params, trace = _em(obs, _initial_params(obs, n_states, rng, cov_floor), tol, max_iter, cov_floor)
        if best is None or trace[-1] > best[1][-1]:
            best = (params, trace)
    return best


# ---------------------------------------------------------------------------
# State ranking and timing
# ---------------------------------------------------------------------------

class Signal(str, enum.Enum):
    LONG = "long"
    FLAT = "flat"


@dataclass(frozen=True, eq=False)
class StateRanking:
    totals: np.ndarray  # per-state sum of next-day returns
    visited: np.ndarray  # bool per state
    rank: np.ndarray  # per-state rank, 1 = best
    order: tuple[int, ...]  # states from rank 1 down

    @property
    def top_two(self) -> frozenset[int]:
        return frozenset(self.order[:2])

    def to_dict(self) -> dict:
        return {"totals": self.totals.tolist(), "visited": self.visited.tolist(), "rank": self.rank.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StateRanking":
        rank = np.asarray(d["rank"], dtype=int)
        return cls(np.asarray(d["totals"], dtype=float), np.asarray(d["visited"], dtype=bool),
                   rank, tuple(int(s) for s in np.argsort(rank, kind="stable")))


def rank_states(path: np.ndarray, next_returns: np.ndarray, n_states: int | None = None) -> StateRanking:
    """Rank states by the total of next-day returns over the days spent in
    each. Unvisited states rank below every visited one."""
    path = np.asarray(path, dtype=np.int64)
    next_returns = np.asarray(next_returns, dtype=float)
    if path.shape != next_returns.shape:
        raise ValueError(f"path length {len(path)} != returns length {len(next_returns)}")
    n = int(n_states if n_states is not None else (path.max() + 1 if len(path) else 1))
    totals = np.zeros(n)
    np.add.at(totals, path, next_returns)
    visited = np.bincount(path, minlength=n)[:n] > 0
    order = tuple(sorted(range(n), key=lambda s: (not visited[s], -totals[s], s)))
    rank = np.empty(n, dtype=int)
    rank[list(order)] = np.arange(1, n + 1)
    return StateRanking(totals, visited, rank, order)


def timing_signal(ranking: StateRanking, current_state: int) -> Signal:
    if not 0 <= current_state < len(ranking.rank):
        raise ValueError(f"state {current_state} out of range")
    return Signal.LONG if current_state in ranking.top_two else Signal.FLAT


# ---------------------------------------------------------------------------
# Fitted timing model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegimeModel:
    boxcox: BoxCoxTransform
    hmm: MGHMMParams
    ranking: StateRanking
    trace: list[float]
    train_path: np.ndarray

    def decode(self, raw_obs: np.ndarray) -> np.ndarray:
        return viterbi(self.hmm, self.boxcox.apply(raw_obs, clip=True))

    def signal(self, raw_obs: np.ndarray) -> tuple[int, Signal]:
        """State of the last row of ``raw_obs`` and its timing signal."""
        state = int(self.decode(raw_obs)[-1])
        return state, timing_signal(self.ranking, state)

    def to_dict(self) -> dict:
        return {"boxcox": self.boxcox.to_dict(), "hmm": self.hmm.to_dict(),
                "ranking": self.ranking.to_dict(), "trace": list(self.trace)}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "RegimeModel":
        d = json.loads(Path(path).read_text())
        return cls(BoxCoxTransform.from_dict(d["boxcox"]), MGHMMParams.from_dict(d["hmm"]),
                   StateRanking.from_dict(d["ranking"]), d.get("trace", []), np.empty(0, dtype=int))


def fit_regime(
    raw_obs: np.ndarray,
    next_returns: np.ndarray,
    n_states: int = 5,
    seed: int = 0,
    restarts: int = 5,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> RegimeModel:
    """Box-Cox + Baum-Welch on the window, Viterbi path, then rank states
    by next-day index return. ``next_returns[t]`` pairs with row ``t``;
    NaN entries (no next day yet) are left out of the ranking."""
    next_returns = np.asarray(next_returns, dtype=float)
    bc = boxcox_fit(raw_obs)
    z = bc.apply(raw_obs)
    hmm, trace = baum_welch(z, n_states, seed=seed, tol=tol, max_iter=max_iter, restarts=restarts)
    path = viterbi(hmm, z)
    ok = np.isfinite(next_returns)
    ranking = rank_states(path[ok], next_returns[ok], n_states)
    return RegimeModel(bc, hmm, ranking, trace, path)


def write_state_path(path: str | Path, dates, states, ranking: StateRanking) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "state", "rank", "signal"])
        for d, s in zip(dates, states):
            w.writerow([str(d), int(s), int(ranking.rank[s]), timing_signal(ranking, int(s)).value])
