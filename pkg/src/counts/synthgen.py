"""Seeded generators for the synthetic benchmark datasets.

Three dataset kinds are produced:

* ``toy``   -- 12-dimensional vectors whose label depends on the first six
  entries only, confounded by a scalar exogenous variable.
* ``spike`` -- multichannel nonlinear autoregressive series with injected
  spikes; the label sequence switches from 0 to 1 one step after the first
  spike in a label-active channel.
* ``pairs`` -- two concatenated toy-style segments sharing one exogenous
  variable, labelled jointly (four classes), used for segment-pair change
  ratio evaluation.

Every instance draws from its own RNG stream derived from (seed, index),
so generation is order independent and reproducible regardless of worker
count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

TOY_DIM = 12
# First six entries are label-relevant, last six are label-agnostic.
TOY_MASK = np.array([1.0] * 6 + [0.0] * 6)


def _instance_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for one instance, stable across numpy versions."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _sigmoid(v: float) -> float:
    return float(1.0 / (1.0 + np.exp(-v)))


# ---------------------------------------------------------------------------
# Toy dataset
# ---------------------------------------------------------------------------

@dataclass
class ToyConfig:
    n: int
    seed: int = 0
    mu_x: float = 0.0
    sigma_x: float = 1.0
    mu_u: float = 1.0
    sigma_u: float = 0.5

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"toy config requires n >= 1, got {self.n}")
        if self.sigma_x < 0 or self.sigma_u < 0:
            raise ConfigError(
                f"toy config requires nonnegative stddevs, got sigma_x={self.sigma_x} sigma_u={self.sigma_u}"
            )


@dataclass(eq=False)
class ToyInstance:
    x: np.ndarray        # (12,)
    u: float
    m: np.ndarray        # (12,) binary, fixed [1]*6 + [0]*6
    z: np.ndarray        # (12,) equals u * (m * x) exactly
    y: int               # class in {0, 1}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ToyInstance)
            and np.array_equal(self.x, other.x)
            and self.u == other.u
            and np.array_equal(self.m, other.m)
            and np.array_equal(self.z, other.z)
            and self.y == other.y
        )


def make_toy_instance(rng: np.random.Generator, cfg: ToyConfig) -> ToyInstance:
    x = rng.normal(cfg.mu_x, cfg.sigma_x, TOY_DIM)
    u = float(rng.normal(cfg.mu_u, cfg.sigma_u))
    z = u * (TOY_MASK * x)
    p = _sigmoid(float(z.sum()) + u)
    y = int(rng.random() < p)
    return ToyInstance(x=x, u=u, m=TOY_MASK.copy(), z=z, y=y)


def gen_toy(cfg: ToyConfig) -> "Dataset":
    cfg.validate()
    instances = [make_toy_instance(_instance_rng(cfg.seed, i), cfg) for i in range(cfg.n)]
    return Dataset(kind="toy", config=cfg, instances=instances)


# ---------------------------------------------------------------------------
# Spike dataset
# ---------------------------------------------------------------------------

@dataclass
class SpikeConfig:
    n: int
    seed: int = 0
    T: int = 80
    D: int = 3
    order_l: int = 2
    alpha: tuple = (0.1, 0.065, 0.003)
    theta: tuple = (0.8, 0.4, 0.0)
    noise_sigma: float = 0.03
    spike_rate: float = 2.0
    spike_amp_mean: float = 1.0
    spike_amp_sigma: float = 0.3
    x_init: float = 0.1
    # The autoregressive recursion with these coefficients is divergent, so
    # history values fed back into the update are saturated at +/- state_clip.
    state_clip: float = 1.0
    # Replace the default lag sum x(t) + ... + x(t-l+1) with l * x(t-l).
    literal_lag_sum: bool = False

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"spike config requires n >= 1, got {self.n}")
        if self.D < 1:
            raise ConfigError(f"spike config requires D >= 1, got {self.D}")
        if self.T < self.order_l + 1:
            raise ConfigError(f"spike config requires T >= order_l + 1, got T={self.T}")
        if len(self.alpha) != self.D or len(self.theta) != self.D:
            raise ConfigError("alpha and theta must have one entry per channel")
        if any(not 0.0 <= th <= 1.0 for th in self.theta):
            raise ConfigError(f"theta entries must lie in [0, 1], got {self.theta}")
        if self.noise_sigma < 0 or self.spike_amp_sigma < 0:
            raise ConfigError("noise_sigma and spike_amp_sigma must be nonnegative")
        if self.spike_rate < 0:
            raise ConfigError(f"spike_rate must be nonnegative, got {self.spike_rate}")
        if self.state_clip <= 0:
            raise ConfigError(f"state_clip must be positive, got {self.state_clip}")


@dataclass(eq=False)
class SpikeInstance:
    x: np.ndarray            # (D, T)
    y: np.ndarray            # (T,) binary, nondecreasing
    n_mask: np.ndarray       # (D,) spike existence
    m_mask: np.ndarray       # (D,) label activeness
    spike_times: tuple       # per-channel sorted int arrays

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SpikeInstance)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.n_mask, other.n_mask)
            and np.array_equal(self.m_mask, other.m_mask)
            and len(self.spike_times) == len(other.spike_times)
            and all(np.array_equal(a, b) for a, b in zip(self.spike_times, other.spike_times))
        )


def narma_step(x_t: float, x_prev: float, noise_t: float, noise_lag: float,
               alpha_d: float, t: int) -> float:
    """One order-2 autoregressive update at step index t (t >= 2)."""
    return _narma_update(x_t + x_prev, x_t, noise_t, noise_lag, alpha_d, t)


def _narma_update(lag_sum, x_t, noise_t, noise_lag, alpha_d, t):
    return 0.5 * x_t + 0.5 * x_t * lag_sum + 1.5 * noise_lag * noise_t + 0.5 + alpha_d * t


def _narma_series(rng: np.random.Generator, cfg: SpikeConfig, alpha_d: float) -> np.ndarray:
    noise = rng.normal(0.0, cfg.noise_sigma, cfg.T)
    x = np.empty(cfg.T)
    x[: cfg.order_l] = cfg.x_init
    c = cfg.state_clip
    for j in range(cfg.order_l, cfg.T):
        hist = np.clip(x[j - cfg.order_l: j], -c, c)
        if cfg.literal_lag_sum:
            lag_sum = cfg.order_l * hist[0]
        else:
            lag_sum = float(hist.sum())
        x[j] = _narma_update(lag_sum, hist[-1], noise[j - 1], noise[j - 2], alpha_d, j)
    return x


def make_spike_instance(rng: np.random.Generator, cfg: SpikeConfig) -> SpikeInstance:
    D, T = cfg.D, cfg.T
    x = np.empty((D, T))
    n_mask = np.zeros(D, dtype=np.int64)
    m_mask = np.zeros(D, dtype=np.int64)
    spike_times = []
    for d in range(D):
        x[d] = _narma_series(rng, cfg, cfg.alpha[d])
        n_mask[d] = int(rng.random() < cfg.theta[d])
        m_mask[d] = int(rng.random() < cfg.theta[d])
        if n_mask[d]:
            eta = min(int(rng.poisson(cfg.spike_rate)), T)
            g = np.sort(rng.choice(T, size=eta, replace=False)).astype(np.int64)
        else:
            g = np.zeros(0, dtype=np.int64)
        for t in g:
            kappa = rng.normal(cfg.spike_amp_mean, cfg.spike_amp_sigma)
            x[d, t] += kappa + cfg.theta[d]
        spike_times.append(g)
    y = spike_label(spike_times, m_mask, T)
    return SpikeInstance(x=x, y=y, n_mask=n_mask, m_mask=m_mask, spike_times=tuple(spike_times))


def spike_label(spike_times, m_mask, T: int) -> np.ndarray:
    """Label switches 0 -> 1 one step after the earliest spike in an m-active channel."""
    firsts = [int(g.min()) for g, m in zip(spike_times, m_mask) if m and len(g) > 0]
    y = np.zeros(T, dtype=np.int64)
    if firsts:
        y[min(firsts) + 1:] = 1
    return y


def gen_spike(cfg: SpikeConfig) -> "Dataset":
    cfg.validate()
    instances = [make_spike_instance(_instance_rng(cfg.seed, i), cfg) for i in range(cfg.n)]
    return Dataset(kind="spike", config=cfg, instances=instances)


# ---------------------------------------------------------------------------
# Segment-pair dataset
# ---------------------------------------------------------------------------

@dataclass
class PairConfig:
    """Two toy-style segments sharing one exogenous variable.

    The joint label is the 4-way class 2*y1 + y2, which keeps the pair
    coupled through a single classifier input of both segments.
    """
    n: int
    seed: int = 0
    mu_x: float = 0.0
    sigma_x: float = 1.0
    mu_u: float = 1.0
    sigma_u: float = 0.5

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"pairs config requires n >= 1, got {self.n}")
        if self.sigma_x < 0 or self.sigma_u < 0:
            raise ConfigError("pairs config requires nonnegative stddevs")


@dataclass(eq=False)
class PairInstance:
    x1: np.ndarray       # (12,)
    x2: np.ndarray       # (12,)
    u: float
    y1: int
    y2: int

    @property
    def x(self) -> np.ndarray:
        """Concatenated model input, shape (24,)."""
        return np.concatenate([self.x1, self.x2])

    @property
    def y(self) -> int:
        """Joint class index in {0, 1, 2, 3}."""
        return 2 * self.y1 + self.y2

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PairInstance)
            and np.array_equal(self.x1, other.x1)
            and np.array_equal(self.x2, other.x2)
            and self.u == other.u
            and self.y1 == other.y1
            and self.y2 == other.y2
        )


def make_pair_instance(rng: np.random.Generator, cfg: PairConfig) -> PairInstance:
    u = float(rng.normal(cfg.mu_u, cfg.sigma_u))
    segments = []
    labels = []
    for _ in range(2):
        x = rng.normal(cfg.mu_x, cfg.sigma_x, TOY_DIM)
        z = u * (TOY_MASK * x)
        p = _sigmoid(float(z.sum()) + u)
        segments.append(x)
        labels.append(int(rng.random() < p))
    return PairInstance(x1=segments[0], x2=segments[1], u=u, y1=labels[0], y2=labels[1])


def gen_pairs(cfg: PairConfig) -> "Dataset":
    cfg.validate()
    instances = [make_pair_instance(_instance_rng(cfg.seed, i), cfg) for i in range(cfg.n)]
    return Dataset(kind="pairs", config=cfg, instances=instances)


# ---------------------------------------------------------------------------
# Dataset container
# ---------------------------------------------------------------------------

_CONFIG_TYPES = {"toy": ToyConfig, "spike": SpikeConfig, "pairs": PairConfig}


@dataclass(eq=False)
class Dataset:
    kind: str
    config: object
    instances: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.instances)

    @property
    def D(self) -> int:
        if self.kind == "toy":
            return TOY_DIM
        if self.kind == "pairs":
            return 2 * TOY_DIM
        return self.config.D

    @property
    def T(self) -> int:
        return self.config.T if self.kind == "spike" else 1

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.kind == other.kind
            and self.config == other.config
            and self.instances == other.instances
        )


def generate(kind: str, **kwargs) -> Dataset:
    """Dispatch helper used by the CLI."""
    if kind not in _CONFIG_TYPES:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    cfg = _CONFIG_TYPES[kind](**kwargs)
    return {"toy": gen_toy, "spike": gen_spike, "pairs": gen_pairs}[kind](cfg)
