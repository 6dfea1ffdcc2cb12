"""Curiosity bonus from state-transition prediction error.

A small forward model maps (extended state, one-hot joint action) to the raw
next-state metric vector. Poorly predicted transitions are the novel ones, and
their squared error becomes an intrinsic reward added to the extrinsic signal
before the transition is stored. Errors are measured on the raw features, not
the normalized ones, so the target does not drift with the normalizer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, JointConfig
from .nn import Mlp
from .qlearn import HIDDEN_SIZES
from .state import ExtendedState

__all__ = ["CuriosityConfig", "ForwardModel", "intrinsic_reward", "combine", "update_forward_model"]


@dataclass(frozen=True, slots=True)
class CuriosityConfig:
    lambda_i: float = 0.1
    lambda_e: float = 1.0
    enabled: bool = True
    lr: float = 1e-3

    def __post_init__(self) -> None:
        if self.lambda_i < 0 or self.lambda_e < 0:
            raise ValueError("reward weights must be non-negative")


class ForwardModel:
    """Predicts the next raw metric vector from state and joint action."""

    def __init__(self, state_dim: int, catalog: Catalog, raw_dim: int, rng: np.random.Generator):
        self.catalog = catalog
        self.raw_dim = raw_dim
        self.block_sizes = [space.size for space in catalog.spaces]
        in_dim = state_dim + sum(self.block_sizes)
        self.net = Mlp([in_dim, *HIDDEN_SIZES, raw_dim], rng)

    def encode_input(self, state: ExtendedState, c: JointConfig) -> np.ndarray:
        blocks = [state.features]
        for size, aid in zip(self.block_sizes, c.component_ids()):
            one_hot = np.zeros(size, dtype=np.float64)
            one_hot[aid] = 1.0
            blocks.append(one_hot)
        return np.concatenate(blocks)

    def predict(self, state: ExtendedState, c: JointConfig) -> np.ndarray:
        return self.net.forward(self.encode_input(state, c))

    def mse(self, state: ExtendedState, c: JointConfig, target_raw: np.ndarray) -> float:
        err = self.predict(state, c) - target_raw
        return float(np.mean(err * err))


def intrinsic_reward(
    model: ForwardModel,
    state: ExtendedState,
    c: JointConfig,
    next_raw: np.ndarray,
    cfg: CuriosityConfig,
) -> float:
    return cfg.lambda_i * model.mse(state, c, next_raw)


def combine(r_ext: float, r_int: float, cfg: CuriosityConfig) -> float:
    if not cfg.enabled:
        return cfg.lambda_e * r_ext
    return cfg.lambda_e * r_ext + r_int


def update_forward_model(
    model: ForwardModel,
    state: ExtendedState,
    c: JointConfig,
    next_raw: np.ndarray,
    lr: float,
) -> float:
    """One gradient step on the squared prediction error; returns the pre-update MSE."""
    x = model.encode_input(state, c)
    pred, cache = model.net.forward_cached(x[None, :])
    err = pred[0] - next_raw
    mse = float(np.mean(err * err))
    gout = (2.0 / model.raw_dim) * err[None, :]
    gw, gb = model.net.backward(cache, gout)
    if all(np.isfinite(g).all() for g in gw) and all(np.isfinite(g).all() for g in gb):
        model.net.apply(gw, gb, -lr)
    return mse
