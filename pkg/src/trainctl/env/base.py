"""Environment contract the coordinator drives."""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, fields

from ..catalog import JointConfig

__all__ = ["MetricsReport", "EnvironmentInterface"]


@dataclass(frozen=True, slots=True)
class MetricsReport:
    map_val: float
    rare_f1: float
    head_f1: float
    mid_f1: float
    tail_f1: float
    loss_train: float
    loss_val: float
    grad_norm: float
    rel_update_mag: float
    texture_richness: float
    terminal: bool = False

    def __post_init__(self) -> None:
        for f in fields(self):
            if f.name == "terminal":
                continue
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
        for name in ("map_val", "rare_f1", "head_f1", "mid_f1", "tail_f1", "texture_richness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0,1], got {v!r}")
        for name in ("loss_train", "loss_val", "grad_norm", "rel_update_mag"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


class EnvironmentInterface(ABC):
    """One episode = reset(), then exactly `horizon` execute() calls."""

    @property
    @abstractmethod
    def horizon(self) -> int: ...

    @abstractmethod
    def reset(self, seed: int) -> MetricsReport: ...

    @abstractmethod
    def execute(self, config: JointConfig) -> MetricsReport: ...
