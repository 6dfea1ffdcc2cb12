"""Composite extrinsic reward.

Four ingredients: shaped validation-mAP gain, loss stability, convergence
speed, and a cost penalty. The total is their weighted sum with the penalty
subtracted. All functions here are pure; RewardCalculator adds the small
amount of bookkeeping (loss window, previous metrics) the coordinator needs.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

from .catalog import Catalog, JointConfig

__all__ = [
    "RewardWeights",
    "ShapingParams",
    "RewardBreakdown",
    "shape_map_delta",
    "stability",
    "convergence",
    "penalty",
    "composite",
    "RewardCalculator",
]

SPIKE_PENALTY = 1.0
STABILITY_GAIN = 10.0
STABILITY_WINDOW = 5
SPIKE_THRESHOLD = 0.5


@dataclass(frozen=True, slots=True)
class RewardWeights:
    w_map: float = 1.0
    w_stab: float = 1.0
    w_conv: float = 0.8
    w_pen: float = 0.2

    def __post_init__(self) -> None:
        for name in ("w_map", "w_stab", "w_conv", "w_pen"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True, slots=True)
class ShapingParams:
    kappa: float = 2.0
    tau: float = 0.005

    def __post_init__(self) -> None:
        if self.kappa < 0 or self.tau < 0:
            raise ValueError("kappa and tau must be non-negative")


@dataclass(frozen=True, slots=True)
class RewardBreakdown:
    shaped_map_gain: float
    stability: float
    convergence: float
    penalty: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "shaped_map_gain": self.shaped_map_gain,
            "stability": self.stability,
            "convergence": self.convergence,
            "penalty": self.penalty,
            "total": self.total,
        }


def shape_map_delta(delta_map: float, p: ShapingParams = ShapingParams()) -> float:
    """Amplify gains beyond the significance threshold tau; pass losses through."""
    if not math.isfinite(delta_map):
        raise ValueError("delta_map must be finite")
    return delta_map + p.kappa * max(0.0, delta_map - p.tau)


def stability(loss_window: list[float], c_s: float = STABILITY_GAIN) -> float:
    """1 / (1 + c_s * sample std of the recent loss window). In (0, 1]."""
    if c_s <= 0:
        raise ValueError("c_s must be positive")
    if len(loss_window) < 2:
        return 1.0
    return 1.0 / (1.0 + c_s * statistics.stdev(loss_window))


def convergence(loss_prev: float, loss_cur: float) -> float:
    """Relative loss reduction, clamped to [-1, 1]."""
    if loss_prev < 0 or loss_cur < 0:
        raise ValueError("losses must be non-negative")
    rate = (loss_prev - loss_cur) / max(loss_prev, 1e-8)
    return max(-1.0, min(1.0, rate))


def penalty(c: JointConfig, spike: bool, catalog: Catalog) -> float:
    """Summed per-strategy costs, plus a flat unit charge on a loss spike."""
    return catalog.cost_of(c) + (SPIKE_PENALTY if spike else 0.0)


def composite(
    shaped_map_gain: float,
    stab: float,
    conv: float,
    pen: float,
    w: RewardWeights = RewardWeights(),
) -> RewardBreakdown:
    total = w.w_map * shaped_map_gain + w.w_stab * stab + w.w_conv * conv - w.w_pen * pen
    return RewardBreakdown(
        shaped_map_gain=shaped_map_gain,
        stability=stab,
        convergence=conv,
        penalty=pen,
        total=total,
    )


class RewardCalculator:
    """Stateful wrapper: holds the loss window and previous metric values.

    One instance per run; feed it the metrics that followed each executed
    configuration and it returns the full breakdown for that step.
    """

    def __init__(
        self,
        catalog: Catalog,
        weights: RewardWeights = RewardWeights(),
        shaping: ShapingParams = ShapingParams(),
        window: int = STABILITY_WINDOW,
        spike_threshold: float = SPIKE_THRESHOLD,
        c_s: float = STABILITY_GAIN,
    ):
        self.catalog = catalog
        self.weights = weights
        self.shaping = shaping
        self.window = window
        self.spike_threshold = spike_threshold
        self.c_s = c_s
        self._losses: list[float] = []
        self._prev_map: float | None = None
        self._prev_loss: float | None = None

    def reset(self, map_val: float, loss_val: float) -> None:
        self._losses = [loss_val]
        self._prev_map = map_val
        self._prev_loss = loss_val

    def step(self, config: JointConfig, map_val: float, loss_val: float) -> RewardBreakdown:
        if self._prev_map is None or self._prev_loss is None:
            raise RuntimeError("RewardCalculator.step before reset")
        self._losses.append(loss_val)
        recent = self._losses[-self.window :]
        spike = (loss_val - self._prev_loss) > self.spike_threshold
        breakdown = composite(
            shaped_map_gain=shape_map_delta(map_val - self._prev_map, self.shaping),
            stab=stability(recent, self.c_s),
            conv=convergence(self._prev_loss, loss_val),
            pen=penalty(config, spike, self.catalog),
            w=self.weights,
        )
        self._prev_map = map_val
        self._prev_loss = loss_val
        return breakdown
