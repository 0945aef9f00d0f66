"""Suffix retention planning: sliding window plus distance-decay dropout.

A suffix token at distance d from the block boundary (the first suffix
position has d = 1) survives with probability

    P(d) = min(1, a * (1/(sigma*sqrt(2*pi))) * exp(-0.5*((k*sigma/W)*d - mu)**2 / sigma**2))

for 0 < d <= W and 0 beyond the window.  Each block iteration resamples the
whole window from an independent substream keyed by the block counter, so no
position is systematically ignored and runs replay exactly.

When the remaining suffix is shorter than W the decay curve is rescaled to
the effective window (W_eff = remaining), keeping the expected retained
fraction equal to the configured density instead of over-keeping the dense
near-boundary part of the curve.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from suffixdrop.errors import ConfigError

# Retain-all scale: makes min(1, P(d)) == 1 for every in-window distance.
_RETAIN_ALL_SCALE = 1e9


@dataclass(frozen=True)
class DropoutConfig:
    """Gaussian distance-decay sampler parameters."""

    window_w: int
    decay_k: float
    scale_a: float
    sigma: float = 1.0
    mu: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.window_w < 1:
            raise ConfigError(f"window_w must be >= 1, got {self.window_w}")
        if self.decay_k <= 0:
            raise ConfigError(f"decay_k must be > 0, got {self.decay_k}")
        if self.scale_a <= 0:
            raise ConfigError(f"scale_a must be > 0, got {self.scale_a}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")

    @classmethod
    def retain_all(cls, window_w: int, rng_seed: int = 0) -> "DropoutConfig":
        """Degenerate sampler that keeps every in-window position."""
        return cls(window_w=window_w, decay_k=1.0, scale_a=_RETAIN_ALL_SCALE, rng_seed=rng_seed)

    def with_seed(self, rng_seed: int) -> "DropoutConfig":
        return replace(self, rng_seed=rng_seed)


@dataclass(frozen=True)
class SuffixPlan:
    """Kept suffix positions for one block iteration.

    kept_positions[slot] is the original absolute position of the slot-th
    surviving suffix token; the slot -> position mapping feeds the rotary
    encoding so pruned sequences keep their original angles.
    """

    kept_positions: np.ndarray
    window_start: int
    window_end: int

    def __post_init__(self):
        pos = np.asarray(self.kept_positions, dtype=np.int64)
        object.__setattr__(self, "kept_positions", pos)
        if pos.size:
            if np.any(np.diff(pos) <= 0):
                raise ValueError("kept positions must be strictly increasing")
            if pos[0] < self.window_start or pos[-1] >= self.window_end:
                raise ValueError(
                    f"kept positions {pos.min()}..{pos.max()} outside window "
                    f"[{self.window_start}, {self.window_end})"
                )

    def __len__(self) -> int:
        return int(self.kept_positions.size)

    @property
    def kept(self) -> list[tuple[int, int]]:
        """(local slot, original absolute position) pairs."""
        return list(enumerate(int(p) for p in self.kept_positions))


def _curve(config: DropoutConfig, window: int) -> np.ndarray:
    """min(1, P(d)) for d = 1..window with the decay rescaled to `window`."""
    d = np.arange(1, window + 1, dtype=np.float64)
    z = (config.decay_k * config.sigma / window) * d
    density = np.exp(-0.5 * ((z - config.mu) / config.sigma) ** 2) / (
        config.sigma * math.sqrt(2.0 * math.pi)
    )
    return np.minimum(1.0, config.scale_a * density)


def retention_probability(d: int, config: DropoutConfig) -> float:
    """Probability of keeping the suffix token at distance d (first token: d=1)."""
    if d <= 0:
        raise ValueError(f"distance must be >= 1, got {d}")
    if d > config.window_w:
        return 0.0
    return float(_curve(config, config.window_w)[d - 1])


def expected_density(config: DropoutConfig) -> float:
    """Expected fraction of in-window suffix tokens kept: mean of min(1, P(d))."""
    return float(_curve(config, config.window_w).mean())


def sample_plan(
    suffix_start: int,
    sequence_len: int,
    config: DropoutConfig,
    block_counter: int,
) -> SuffixPlan:
    """Draw one block iteration's keep set.

    Every in-window position is an independent Bernoulli draw against the
    distance-decay curve; the RNG substream is derived from
    (rng_seed, block_counter), so repeated calls with the same pair replay
    the identical plan while different blocks resample freshly.
    """
    window_end = min(suffix_start + config.window_w, sequence_len)
    if suffix_start >= sequence_len:
        return SuffixPlan(np.empty(0, dtype=np.int64), suffix_start, suffix_start)
    window = window_end - suffix_start
    probs = _curve(config, window)
    rng = np.random.default_rng([config.rng_seed, block_counter])
    keep = rng.random(window) < probs
    positions = suffix_start + np.flatnonzero(keep).astype(np.int64)
    return SuffixPlan(positions, suffix_start, window_end)


# (model, benchmark) -> (decay_k, scale_a, nominal density, window) used in
# the reference experiments.  Nominal density is the published rounded label;
# expected_density computes the exact value for a given config.
_PRESET_TABLE: dict[tuple[str, str], tuple[float, float, float, int]] = {
    ("llada-instruct", "gsm8k"): (4.0, 2.0, 0.250, 256),
    ("llada-instruct", "math"): (4.0, 2.0, 0.250, 256),
    ("llada-instruct", "humaneval"): (3.0, 2.3, 0.375, 512),
    ("llada-instruct", "mbpp"): (3.0, 2.3, 0.375, 128),
    ("llada-1.5", "gsm8k"): (3.0, 1.6, 0.250, 256),
    ("llada-1.5", "math"): (3.0, 1.6, 0.250, 256),
    ("llada-1.5", "humaneval"): (3.0, 1.6, 0.250, 128),
    ("llada-1.5", "mbpp"): (3.0, 1.6, 0.250, 512),
    ("dream-base", "gsm8k"): (4.0, 1.6, 0.200, 256),
    ("dream-base", "math"): (4.0, 1.6, 0.200, 128),
    ("dream-base", "humaneval"): (3.0, 2.3, 0.375, 128),
    ("dream-base", "mbpp"): (3.0, 1.6, 0.250, 128),
}


def preset_names() -> list[str]:
    return sorted(f"{m}/{b}" for (m, b) in _PRESET_TABLE)


def preset(model_name: str, benchmark_name: str, rng_seed: int = 0) -> DropoutConfig:
    """Named sampler configuration for a (model, benchmark) pair."""
    key = (model_name.strip().lower(), benchmark_name.strip().lower())
    if key not in _PRESET_TABLE:
        raise KeyError(
            f"unknown preset {model_name!r}/{benchmark_name!r}; known presets: "
            + ", ".join(preset_names())
        )
    decay_k, scale_a, _, window = _PRESET_TABLE[key]
    return DropoutConfig(window_w=window, decay_k=decay_k, scale_a=scale_a, rng_seed=rng_seed)


def preset_nominal_density(model_name: str, benchmark_name: str) -> float:
    """Published rounded density label for a preset (for display only)."""
    key = (model_name.strip().lower(), benchmark_name.strip().lower())
    if key not in _PRESET_TABLE:
        raise KeyError(
            f"unknown preset {model_name!r}/{benchmark_name!r}; known presets: "
            + ", ".join(preset_names())
        )
    return _PRESET_TABLE[key][2]
