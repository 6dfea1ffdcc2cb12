"""Observation features for the agents.

The instantaneous snapshot of a training run is an 8-field record. Agents do
not see it directly: the builder concatenates the current values with two
exponential moving averages (a fast one and a slow one) and normalizes every
entry with running statistics, so the input dimension stays fixed at 24 no
matter how long the run is.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "TrainingState",
    "EmaPair",
    "ExtendedState",
    "StateBuilder",
    "ema_update",
    "RunningNorm",
    "FEATURE_NAMES",
    "extended_feature_names",
]

#: Order is load-bearing: it fixes the layout of every feature vector and is
#: written to the run manifest so downstream tooling can label columns.
FEATURE_NAMES = (
    "map_val",
    "loss_train",
    "loss_val",
    "delta_loss_val",
    "grad_norm",
    "rel_update_mag",
    "texture_richness",
    "epoch_frac",
)

NORM_STD_FLOOR = 1e-6
NORM_CLIP = 5.0


@dataclass(frozen=True, slots=True)
class TrainingState:
    """One snapshot of the run being controlled.

    delta_loss_val is the validation-loss decrease (previous minus current),
    so positive means the run improved.
    """

    map_val: float
    loss_train: float
    loss_val: float
    delta_loss_val: float
    grad_norm: float
    rel_update_mag: float
    texture_richness: float
    epoch_frac: float

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v!r}")
        for name in ("map_val", "texture_richness", "epoch_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0,1], got {v!r}")
        for name in ("loss_train", "loss_val", "grad_norm", "rel_update_mag"):
            v = getattr(self, name)
            if v < 0.0:
                raise ValueError(f"{name} must be non-negative, got {v!r}")

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=np.float64)


@dataclass(frozen=True, slots=True)
class EmaPair:
    fast: float = 0.3
    slow: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 < self.slow < self.fast <= 1.0:
            raise ValueError(f"need 0 < slow < fast <= 1, got {self!r}")


@dataclass(frozen=True, slots=True)
class ExtendedState:
    """Normalized (current, fast EMA, slow EMA) feature vector of dimension 24."""

    features: np.ndarray

    def digest(self) -> str:
        return self.features.tobytes().hex()[:32]


def ema_update(prev: float, x: float, alpha: float) -> float:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0,1], got {alpha}")
    return (1.0 - alpha) * prev + alpha * x


class RunningNorm:
    """Welford running mean/variance, one accumulator per feature entry."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim, dtype=np.float64)
        self._m2 = np.zeros(dim, dtype=np.float64)

    def update(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (x - self.mean)

    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self._m2 / (self.count - 1))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mean) / np.maximum(self.std(), NORM_STD_FLOOR)
        return np.clip(z, -NORM_CLIP, NORM_CLIP)


def extended_feature_names(names: tuple[str, ...] = FEATURE_NAMES) -> list[str]:
    return list(names) + [f"{n}_ema_fast" for n in names] + [f"{n}_ema_slow" for n in names]


class StateBuilder:
    """Turns a stream of TrainingState snapshots into fixed-size agent inputs.

    Single-owner mutable: one builder per run. The EMA recurrences run on the
    raw field values; the concatenated vector is then normalized entry-wise
    (update statistics first, then standardize, so the very first vector is
    all zeros).
    """

    def __init__(self, rates: EmaPair | None = None):
        self.rates = rates or EmaPair()
        self.dim = 3 * len(FEATURE_NAMES)
        self._fast: np.ndarray | None = None
        self._slow: np.ndarray | None = None
        self._norm = RunningNorm(self.dim)

    def observe(self, s: TrainingState) -> ExtendedState:
        raw = s.as_vector()
        if self._fast is None:
            self._fast = raw.copy()
            self._slow = raw.copy()
        else:
            self._fast = (1.0 - self.rates.fast) * self._fast + self.rates.fast * raw
            self._slow = (1.0 - self.rates.slow) * self._slow + self.rates.slow * raw
        stacked = np.concatenate([raw, self._fast, self._slow])
        self._norm.update(stacked)
        features = self._norm.normalize(stacked)
        features.setflags(write=False)
        return ExtendedState(features=features)

    # Alias matching the verb used elsewhere in the codebase.
    extend = observe
