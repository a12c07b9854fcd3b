"""Sampling the Gaussian measure and reweighting it to the Gibbs measure.

Under the Gaussian measure every mode is an independent complex normal
variable with density proportional to ``exp(-(beta/2)(1+k^2)|psi_k|^2)``, so
``E|psi_k|^2 = 2/(beta(1+k^2))``.  The Gibbs measure differs by the factor
``exp(-beta P)``, which is at most one because ``F >= 0``.  Averages against
the Gibbs measure are computed by self-normalised importance sampling
(the default) or with an independence Metropolis chain.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .fourier_state import (FourierState, ModelParams, evaluate_P, hs_norm, modes,
                            state_from_json, state_to_json)

METHODS = ("gaussian-only", "importance-weights", "independence-metropolis")

#: Minimum effective sample size accepted by the estimators.
MIN_ESS = 10.0


@dataclass(frozen=True)
class SamplerConfig:
    """Sampling recipe; ``(seed, workers)`` fully determines the stream."""

    params: ModelParams
    seed: int = 0
    method: str = "importance-weights"
    n_samples: int = 10_000
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown sampling method {self.method!r}; choose from {METHODS}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    def with_(self, **kw) -> "SamplerConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class WeightedSample:
    state: FourierState
    log_weight: float

    def __post_init__(self):
        if self.log_weight > 0:
            raise ValueError("log_weight must be <= 0")


@dataclass
class WeightedBatch:
    """Array form of many weighted samples: ``states`` is ``(S, 2N+1)``."""

    states: np.ndarray
    log_weight: np.ndarray
    method: str = "importance-weights"
    acceptance: float | None = None

    def __len__(self):
        return self.states.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Weights rescaled by their maximum (ratios are what matters)."""
        lw = self.log_weight
        return np.exp(lw - lw.max()) if lw.size else lw

    def __iter__(self) -> Iterator[WeightedSample]:
        for s, lw in zip(self.states, self.log_weight):
            yield WeightedSample(FourierState(s), float(lw))


@dataclass
class Estimate:
    mean: float
    stderr: float
    ess: float
    n: int

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "ess": self.ess, "n": self.n}


def gaussian_sd(N: int, beta: float) -> np.ndarray:
    """Per-component standard deviation ``(beta(1+k^2))^(-1/2)`` of Re and Im."""
    k = modes(N).astype(float)
    return 1.0 / np.sqrt(beta * (1.0 + k * k))


def _worker_sizes(n: int, workers: int) -> list[int]:
    base, extra = divmod(n, workers)
    return [base + (1 if w < extra else 0) for w in range(workers)]


def worker_streams(seed: int, workers: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(workers)]


def sample_gaussian(config: SamplerConfig, count: int | None = None) -> np.ndarray:
    """Independent Gaussian-measure draws, shape ``(count, 2N+1)``.

    Each worker owns a child stream of ``SeedSequence(seed)``; the merged
    output is the concatenation in worker order, so it depends only on
    ``(seed, workers, count)``.
    """
    p = config.params
    count = config.n_samples if count is None else count
    sd = gaussian_sd(p.N, p.beta)
    parts = []
    for rng, m in zip(worker_streams(config.seed, config.workers),
                      _worker_sizes(count, config.workers)):
        z = rng.standard_normal((m, 2 * p.N + 1, 2))
        parts.append(sd * (z[..., 0] + 1j * z[..., 1]))
    return np.concatenate(parts, axis=0)


def iter_gaussian(config: SamplerConfig, count: int | None = None) -> Iterator[FourierState]:
    for row in sample_gaussian(config, count):
        yield FourierState(row)


def gibbs_weight(state, params: ModelParams):
    """``exp(-beta P(psi))``; lies in ``(0, 1]``."""
    w = np.exp(-params.beta * evaluate_P(state, params))
    assert np.all(w <= 1.0), "Gibbs weight above one: F is not nonnegative"
    return w


def log_gibbs_weight(states, params: ModelParams) -> np.ndarray:
    return -params.beta * evaluate_P(states, params)


def independence_metropolis(config: SamplerConfig, count: int | None = None) -> WeightedBatch:
    """Markov chain with Gaussian proposals targeting the Gibbs measure.

    The acceptance probability is ``min(1, w(y)/w(x))``; output samples carry
    zero log-weight.
    """
    p = config.params
    count = config.n_samples if count is None else count
    props = sample_gaussian(config, count + 1)
    lw = log_gibbs_weight(props, p)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(config.workers + 1)[-1])
    logu = np.log(rng.random(count))
    cur = 0
    chain = np.empty(count, dtype=np.intp)
    accepted = 0
    for i in range(count):
        j = i + 1
        if logu[i] < lw[j] - lw[cur]:
            cur = j
            accepted += 1
        chain[i] = cur
    return WeightedBatch(props[chain], np.zeros(count), "independence-metropolis", accepted / count)


def draw(config: SamplerConfig, count: int | None = None) -> WeightedBatch:
    """Samples ready for :func:`estimate_mean` according to ``config.method``."""
    if config.method == "independence-metropolis":
        return independence_metropolis(config, count)
    states = sample_gaussian(config, count)
    if config.method == "gaussian-only":
        return WeightedBatch(states, np.zeros(len(states)), "gaussian-only")
    return WeightedBatch(states, log_gibbs_weight(states, config.params), "importance-weights")


def _batch_means_stderr(f: np.ndarray, n_batches: int = 50) -> float:
    n = len(f) // n_batches
    if n < 2:
        return float(f.std(ddof=1) / math.sqrt(len(f)))
    means = f[: n * n_batches].reshape(n_batches, n).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def weighted_mean(values: np.ndarray, log_weight: np.ndarray | None = None,
                  min_ess: float = MIN_ESS) -> Estimate:
    """Self-normalised mean with delta-method standard error."""
    f = np.asarray(values, dtype=float)
    n = f.size
    if log_weight is None or not np.any(log_weight):
        m = float(f.mean())
        se = float(f.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return Estimate(m, se, float(n), n)
    w = np.exp(log_weight - np.max(log_weight))
    sw = w.sum()
    ess = float(sw**2 / np.sum(w * w))
    if ess < min_ess:
        raise ValueError(
            f"effective sample size {ess:.1f} below {min_ess}: increase beta or the sample count"
        )
    m = float(np.sum(w * f) / sw)
    se = float(math.sqrt(np.sum(w * w * (f - m) ** 2)) / sw)
    return Estimate(m, se, ess, n)


def estimate_mean(observable: Callable[[np.ndarray], np.ndarray], config: SamplerConfig,
                  batch: WeightedBatch | None = None) -> Estimate:
    """Average of ``observable`` (a function of a ``(S, 2N+1)`` batch) under the
    measure selected by ``config.method``.

    Raises
    ------
    ValueError
        If the effective sample size drops below ten.
    """
    batch = draw(config) if batch is None else batch
    f = np.real(np.asarray(observable(batch.states), dtype=complex))
    if batch.method == "independence-metropolis":
        m = float(f.mean())
        return Estimate(m, _batch_means_stderr(f), float(len(f)), len(f))
    return weighted_mean(f, batch.log_weight)


def l2_norm_estimate(values: np.ndarray, log_weight: np.ndarray | None = None) -> Estimate:
    """``||f|| = sqrt(<|f|^2>)`` with the standard error propagated."""
    e = weighted_mean(np.abs(values) ** 2, log_weight)
    r = math.sqrt(max(e.mean, 0.0))
    se = e.stderr / (2 * r) if r > 0 else 0.0
    return Estimate(r, se, e.ess, e.n)


def partition_ratio(config: SamplerConfig) -> Estimate:
    """Monte Carlo ``Z(beta)/Z_g(beta)`` as the Gaussian mean of ``exp(-beta P)``."""
    states = sample_gaussian(config)
    w = gibbs_weight(states, config.params)
    return weighted_mean(w)


@dataclass
class ActionBoundReport:
    beta: float
    rows: list[dict] = field(default_factory=list)
    floor: float = 0.5
    ceiling: float = math.inf
    passed: bool = True

    def as_dict(self):
        return {"beta": self.beta, "floor": self.floor, "ceiling": self.ceiling,
                "passed": self.passed, "rows": self.rows}


def verify_action_lower_bound(ks: Sequence[int], params: ModelParams, config: SamplerConfig,
                              floor: float = 0.5, ceiling: float = math.inf,
                              batch: WeightedBatch | None = None) -> ActionBoundReport:
    """``||(|psi_k|^2)||_{mu_beta} * beta (1+k^2)`` for each ``k`` against a floor.

    The Gaussian value of the ratio is ``sqrt(8)``.
    """
    config = config.with_(params=params)
    batch = draw(config) if batch is None else batch
    rep = ActionBoundReport(params.beta, floor=floor, ceiling=ceiling)
    for k in ks:
        I = np.abs(batch.states[:, k + params.N]) ** 2
        est = l2_norm_estimate(I, batch.log_weight if batch.method != "independence-metropolis" else None)
        scale = params.beta * (1 + k * k)
        ratio = est.mean * scale
        ok = floor <= ratio <= ceiling
        rep.rows.append({"k": k, "norm": est.mean, "stderr": est.stderr, "ratio": ratio,
                         "ratio_stderr": est.stderr * scale, "ess": est.ess, "pass": ok})
        rep.passed &= ok
    return rep


@dataclass
class TailReport:
    thresholds: np.ndarray
    tail: np.ndarray
    exceedances: np.ndarray
    slope: float | None
    fit_mask: np.ndarray
    passed: bool
    degenerate: bool

    def as_dict(self):
        return {"thresholds": self.thresholds.tolist(), "tail": self.tail.tolist(),
                "exceedances": self.exceedances.tolist(), "slope": self.slope,
                "passed": self.passed, "degenerate": self.degenerate}


def tail_probability(thresholds, s1: float, params: ModelParams, config: SamplerConfig,
                     a: float = 0.25, min_count: int = 20,
                     tail_window: tuple[float, float] = (1e-4, 0.5)) -> TailReport:
    """Weighted ``mu_beta(||psi||_{H^s1} > M)`` on a grid of ``M`` and the slope of
    ``log tail`` against ``beta M^2``.

    The fit uses thresholds whose tail lies inside ``tail_window`` and that
    have at least ``min_count`` exceedances.  With no usable points the
    report is flagged degenerate rather than failed.
    """
    if s1 >= 0.5:
        raise ValueError("s1 must be below 1/2")
    config = config.with_(params=params)
    batch = draw(config)
    w = batch.weights
    norms = hs_norm(batch.states, s1)
    M = np.asarray(thresholds, dtype=float)
    exceed = norms[None, :] > M[:, None]
    tail = (exceed * w).sum(axis=1) / w.sum()
    counts = exceed.sum(axis=1)
    mask = (counts >= min_count) & (tail >= tail_window[0]) & (tail <= tail_window[1])
    if mask.sum() < 2:
        return TailReport(M, tail, counts, None, mask, True, True)
    x = params.beta * M[mask] ** 2
    slope = float(np.polyfit(x, np.log(tail[mask]), 1)[0])
    return TailReport(M, tail, counts, slope, mask, slope <= -a, False)


@dataclass
class SmallBallReport:
    monte_carlo: float
    stderr: float
    closed_form: float
    n: int = 0

    @property
    def z(self) -> float:
        """Deviation in units of the binomial error under the closed-form value.

        The empirical error is zero when no draw lands in the ball, so the
        null-hypothesis error ``sqrt(p(1-p)/n)`` is used as a floor.
        """
        p = self.closed_form
        se = max(self.stderr, math.sqrt(p * (1 - p) / self.n) if self.n else 0.0)
        if se == 0:
            return 0.0 if self.monte_carlo == p else math.inf
        return abs(self.monte_carlo - p) / se

    def as_dict(self):
        return {"monte_carlo": self.monte_carlo, "stderr": self.stderr,
                "closed_form": self.closed_form, "z": self.z}


def small_ball_closed_form(gamma: float, N: int) -> float:
    """``prod_{|k|<=N} (1 - exp(-(1+k^2)^(1-gamma)/2))``, independent of ``beta``."""
    k = modes(N).astype(float)
    return float(np.prod(-np.expm1(-((1 + k * k) ** (1 - gamma)) / 2)))


def small_ball_probability(gamma: float, params: ModelParams, config: SamplerConfig) -> SmallBallReport:
    """Gaussian probability that ``|psi_k| < (1+k^2)^(-gamma/2) beta^(-1/2)`` for all k."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    config = config.with_(params=params)
    states = sample_gaussian(config)
    k = modes(params.N).astype(float)
    radius = (1 + k * k) ** (-gamma / 2) / math.sqrt(params.beta)
    inside = np.all(np.abs(states) < radius, axis=1).astype(float)
    est = weighted_mean(inside)
    return SmallBallReport(est.mean, est.stderr, small_ball_closed_form(gamma, params.N), est.n)


def gibbs_gauss_norm_check(values: np.ndarray, log_weight: np.ndarray) -> dict:
    """Compare ``||f||_{mu_beta}`` with ``exp(C) ||f||_{g,beta}``, ``C = -log(mean weight)``.

    ``log_weight`` must be the un-normalised ``-beta P`` of Gaussian draws, so
    the same stream feeds both norms.
    """
    w = np.exp(log_weight)
    C = -math.log(w.mean())
    gibbs = l2_norm_estimate(values, log_weight).mean
    gauss = l2_norm_estimate(values).mean
    return {"gibbs_norm": gibbs, "gauss_norm": gauss, "C_hat": C,
            "bound": math.exp(C) * gauss, "passed": gibbs <= math.exp(C) * gauss}


def restricted_norm_chain(values: np.ndarray, batch: WeightedBatch, s1: float = 1 / 3,
                          radius: float | None = None, beta: float | None = None) -> dict:
    """Ratio ``||f||_{mu_beta} / ||f chi||_{g,beta}`` with ``chi`` the indicator of
    ``||psi||_{H^s1} < radius``, and the implied constant ``c = -beta log(ratio)``.

    The default radius (twice the Gaussian median of the norm) is a convention.
    """
    norms = hs_norm(batch.states, s1)
    if radius is None:
        radius = 2.0 * float(np.median(norms))
    chi = norms < radius
    gibbs = l2_norm_estimate(values, batch.log_weight).mean
    restricted = l2_norm_estimate(values * chi).mean
    ratio = gibbs / restricted if restricted > 0 else math.inf
    out = {"gibbs_norm": gibbs, "restricted_gauss_norm": restricted, "radius": radius,
           "s1": s1, "ratio": ratio}
    if beta is not None and 0 < ratio < 1:
        out["implied_c"] = -beta * math.log(ratio)
    return out


# -- JSON lines output ---------------------------------------------------------

def write_samples(path, batch: WeightedBatch, beta_hint: float | None = None) -> None:
    with Path(path).open("w") as fh:
        for s, lw in zip(batch.states, batch.log_weight):
            obj = state_to_json(s, beta_hint)
            obj["log_weight"] = float(lw)
            fh.write(json.dumps(obj) + "\n")


def read_samples(path) -> list[WeightedSample]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            obj = json.loads(line)
            out.append(WeightedSample(state_from_json(obj), float(obj.get("log_weight", 0.0))))
    return out
