"""Seeded surrogate of a training run.

The surrogate is the invented stand-in for a real trainer: validation loss
decays multiplicatively at a rate set by how effective the chosen strategies
are in the current phase of the run, mAP follows the loss through a fixed
logistic, and class-imbalance only touches the per-stratum F1 multipliers.
Everything is documented data: the effectiveness tensor ships as JSON and can
be swapped out.

Update law per decision step (one surrogate epoch):

    loss <- loss * (1 - eta * g(config, phase)) + noise
    g    =  sum of the four per-strategy phase entries + pairwise bonuses

with the loss clamped to a sane band. The same four noise draws happen on
every step regardless of the configuration, so runs with equal seeds see
identical noise streams even when their decisions diverge.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..catalog import Catalog, JointConfig, index_to_config, joint_space_size
from .base import EnvironmentInterface, MetricsReport

__all__ = [
    "SyntheticTrainerSpec",
    "SurrogateEnv",
    "retention_fraction",
    "map_from_loss",
    "strata_multipliers",
    "load_spec",
    "default_spec",
    "make_deceptive_spec",
    "best_static_config",
    "g_per_phase_table",
    "RHO_PRESETS",
]

# Logistic mapping loss -> mAP, calibrated at (loss 1.0 -> 0.1) and (0.05 -> 0.95).
_LOGISTIC_A = math.log(171.0) / 0.95
_LOGISTIC_B = 1.0 - math.log(9.0) / _LOGISTIC_A

LOSS_MIN = 1e-3
LOSS_MAX = 4.0
BASE_F1_SCALE = 0.9
STRATUM_SOFTEN = 0.08
RHO_PRESETS = (1.0, 2.0, 5.0, 10.0)

#: Tail-F1 relief per unit rho for the imbalance-aware losses.
TAIL_MITIGATION = {"CB": 0.035, "ASL": 0.028, "Focal": 0.02}

_DEFAULT_GRAD_SCALE = {"SGD": 1.0, "Adam": 0.8, "AdamW": 0.75, "RAdam": 0.85, "LARS": 1.3}
_DEFAULT_ADAPTIVITY = {"SGD": 0.0, "Adam": 1.0, "AdamW": 1.0, "RAdam": 0.8, "LARS": 1.5}


def map_from_loss(loss: float) -> float:
    return 1.0 / (1.0 + math.exp(_LOGISTIC_A * (loss - _LOGISTIC_B)))


def retention_fraction(rank: int, beta: float) -> float:
    """Fraction of samples kept for the class at the given frequency rank (1 = most frequent)."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return math.exp(-beta * (rank - 1))


def strata_multipliers(rho: float, n_classes: int, loss_name: str) -> tuple[float, float, float]:
    """Deterministic (head, mid, tail) F1 multipliers for an imbalance level.

    Derived from the mean retention of each stratum under the exponential
    rank-decay sampler, compressed so realistic rho values degrade rather
    than erase the tail. Imbalance-aware losses claw back part of the tail
    multiplier, never past the mid stratum.
    """
    if rho < 0:
        raise ValueError("rho must be non-negative")
    beta = rho / (n_classes - 1)
    k = max(1, round(0.25 * n_classes))
    ranks = list(range(1, n_classes + 1))
    strata = (ranks[:k], ranks[k : n_classes - k], ranks[n_classes - k :])
    mults = []
    for stratum in strata:
        mean_retention = sum(retention_fraction(r, beta) for r in stratum) / len(stratum)
        mults.append(mean_retention**STRATUM_SOFTEN)
    head, mid, tail = mults
    tail = min(tail * (1.0 + TAIL_MITIGATION.get(loss_name, 0.0) * rho), mid)
    return head, mid, tail


@dataclass(frozen=True)
class SyntheticTrainerSpec:
    effectiveness: dict[str, dict[str, tuple[float, float, float]]]
    eta: float = 0.08
    noise_std: float = 0.02
    phase_boundaries: tuple[float, float] = (0.3, 0.7)
    interactions: tuple[tuple[tuple[str, str], tuple[str, str], float], ...] = ()
    rho: float = 0.0
    n_classes: int = 20
    grad_scale: dict[str, float] = field(default_factory=lambda: dict(_DEFAULT_GRAD_SCALE))
    adaptivity: dict[str, float] = field(default_factory=lambda: dict(_DEFAULT_ADAPTIVITY))

    def __post_init__(self) -> None:
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        lo, hi = self.phase_boundaries
        if not 0.0 < lo < hi < 1.0:
            raise ValueError("phase boundaries must satisfy 0 < early < late < 1")
        for comp, table in self.effectiveness.items():
            for name, entries in table.items():
                if len(entries) != 3 or any(not 0.0 <= e <= 1.0 for e in entries):
                    raise ValueError(f"effectiveness[{comp}][{name}] must be 3 values in [0,1]")

    @property
    def beta(self) -> float:
        return self.rho / (self.n_classes - 1)

    def check_covers(self, catalog: Catalog) -> None:
        for space in catalog.spaces:
            table = self.effectiveness.get(space.component.value, {})
            missing = [n for n in space.names if n not in table]
            if missing:
                raise ValueError(f"effectiveness table missing {space.component.value}: {missing}")

    def phase_of(self, frac: float) -> int:
        lo, hi = self.phase_boundaries
        if frac < lo:
            return 0
        return 1 if frac < hi else 2

    def g(self, names: dict[str, str], phase: int) -> float:
        total = sum(self.effectiveness[comp][name][phase] for comp, name in names.items())
        for (comp_a, name_a), (comp_b, name_b), bonus in self.interactions:
            if names.get(comp_a) == name_a and names.get(comp_b) == name_b:
                total += bonus
        return total

    def g_attribution(self, names: dict[str, str], phase: int) -> dict[str, float]:
        """Per-component share of g; interaction bonuses are deliberately unattributed."""
        return {comp: self.effectiveness[comp][name][phase] for comp, name in names.items()}


def load_spec(path: str, rho: float | None = None) -> SyntheticTrainerSpec:
    with open(path, "rb") as fh:
        return _spec_from_obj(json.load(fh), rho)


def default_spec(rho: float = 0.0) -> SyntheticTrainerSpec:
    with resources.files("trainctl.data").joinpath("effectiveness.json").open("rb") as fh:
        return _spec_from_obj(json.load(fh), rho)


def _spec_from_obj(obj: dict, rho: float | None) -> SyntheticTrainerSpec:
    if obj.get("version") != 1:
        raise ValueError(f"unsupported effectiveness schema version {obj.get('version')!r}")
    effectiveness = {
        comp: {name: tuple(vals) for name, vals in table.items()}
        for comp, table in obj["effectiveness"].items()
    }
    interactions = tuple(
        (tuple(row["a"]), tuple(row["b"]), float(row["bonus"])) for row in obj.get("interactions", [])
    )
    return SyntheticTrainerSpec(
        effectiveness=effectiveness,
        eta=float(obj["eta"]),
        noise_std=float(obj["noise_std"]),
        phase_boundaries=tuple(obj["phase_boundaries"]),
        interactions=interactions,
        rho=float(obj.get("rho", 0.0)) if rho is None else rho,
        n_classes=int(obj["n_classes"]),
    )


def make_deceptive_spec() -> SyntheticTrainerSpec:
    """Fixture with a low-reward attractor for the curiosity comparison.

    Every strategy is interchangeable except one optimizer arm that is useless
    for the first two phases (strictly worse than the crowd, and costlier) but
    far ahead in the late phase. Greedy extrinsic learning settles on the
    crowd; finding the late-phase arm requires trying it again once the run
    has moved on. Its gradient signature is also distinct, so a forward model
    is maximally surprised by it.
    """
    flat = lambda v: (v, v, v)
    effectiveness = {
        "aug": {n: flat(0.12) for n in ("Basic", "CutMix", "MixUp", "RandAugment", "FastAA")},
        "opt": {
            "SGD": flat(0.14),
            "Adam": flat(0.14),
            "AdamW": flat(0.14),
            "RAdam": flat(0.14),
            "LARS": (0.0, 0.0, 0.62),
        },
        "lrs": {n: flat(0.12) for n in ("Step", "MultiStep", "Cosine", "OneCycle", "Linear", "WarmUp")},
        "loss": {n: flat(0.12) for n in ("BCE", "Focal", "ASL", "MSE", "CB")},
    }
    # Low observation noise keeps the crowd's mAP plateau tight, so a
    # threshold above it is only reachable by actually adopting the arm.
    return SyntheticTrainerSpec(
        effectiveness=effectiveness,
        noise_std=0.005,
        grad_scale={"SGD": 0.9, "Adam": 1.0, "AdamW": 1.1, "RAdam": 1.0, "LARS": 3.0},
    )


class SurrogateEnv(EnvironmentInterface):
    """Deterministic-under-seed surrogate trainer."""

    def __init__(self, catalog: Catalog, spec: SyntheticTrainerSpec, horizon: int = 25):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        spec.check_covers(catalog)
        self.catalog = catalog
        self.spec = spec
        self._horizon = horizon
        self._rng: np.random.Generator | None = None
        self._loss = 1.0
        self._step = 0
        self._texture = 0.5

    @property
    def horizon(self) -> int:
        return self._horizon

    def reset(self, seed: int) -> MetricsReport:
        self._rng = np.random.default_rng(seed)
        self._loss = 1.0
        self._step = 0
        self._texture = float(self._rng.uniform(0.3, 0.7))
        return self._report(opt_name="SGD", noise=np.zeros(3), terminal=False)

    def execute(self, config: JointConfig) -> MetricsReport:
        if self._rng is None:
            raise RuntimeError("execute before reset")
        if self._step >= self._horizon:
            raise RuntimeError("episode exhausted; call reset")
        names = self.catalog.names_for(config)
        phase = self.spec.phase_of(self._step / self._horizon)
        g = self.spec.g(names, phase)
        noise = self._rng.standard_normal(4)
        self._loss = self._loss * (1.0 - self.spec.eta * g) + self.spec.noise_std * float(noise[0])
        self._loss = float(np.clip(self._loss, LOSS_MIN, LOSS_MAX))
        self._step += 1
        return self._report(
            opt_name=names["opt"],
            loss_name=names["loss"],
            noise=noise[1:],
            terminal=self._step >= self._horizon,
        )

    def g_attribution(self, config: JointConfig, step_index: int) -> dict[str, float]:
        """Marginal per-component share of g at a step, for uncoordinated-reward runs."""
        names = self.catalog.names_for(config)
        phase = self.spec.phase_of(step_index / self._horizon)
        return self.spec.g_attribution(names, phase)

    def _report(
        self, opt_name: str, noise: np.ndarray, terminal: bool, loss_name: str = "BCE"
    ) -> MetricsReport:
        map_val = map_from_loss(self._loss)
        head_m, mid_m, tail_m = strata_multipliers(self.spec.rho, self.spec.n_classes, loss_name)
        base_f1 = BASE_F1_SCALE * map_val
        clip01 = lambda v: float(np.clip(v, 0.0, 1.0))
        grad = self._loss * self.spec.grad_scale[opt_name] * (1.0 + 0.05 * float(noise[0]))
        rel = (0.004 + 0.012 * self.spec.adaptivity[opt_name]) * (
            1.0 + 0.05 * float(noise[1])
        ) + 0.002 * self._loss
        loss_train = 0.92 * self._loss + 0.02 * float(noise[2]) * self._loss
        return MetricsReport(
            map_val=clip01(map_val),
            rare_f1=clip01(base_f1 * tail_m),
            head_f1=clip01(base_f1 * head_m),
            mid_f1=clip01(base_f1 * mid_m),
            tail_f1=clip01(base_f1 * tail_m),
            loss_train=max(loss_train, 0.0),
            loss_val=self._loss,
            grad_norm=max(grad, 0.0),
            rel_update_mag=max(rel, 0.0),
            texture_richness=self._texture,
            terminal=terminal,
        )


def run_static(
    catalog: Catalog, spec: SyntheticTrainerSpec, horizon: int, config: JointConfig, seed: int
) -> MetricsReport:
    """One full episode under a constant configuration; returns the final report."""
    env = SurrogateEnv(catalog, spec, horizon)
    env.reset(seed)
    report = None
    for _ in range(horizon):
        report = env.execute(config)
    return report


def best_static_config(
    catalog: Catalog, spec: SyntheticTrainerSpec, horizon: int, seeds: list[int]
) -> tuple[JointConfig, float]:
    """Brute force over the whole joint space; ties go to the lowest index."""
    best_index, best_map = 0, -1.0
    for i in range(joint_space_size(catalog.spaces)):
        config = index_to_config(i, catalog.spaces)
        final = np.mean([run_static(catalog, spec, horizon, config, s).map_val for s in seeds])
        if final > best_map:
            best_index, best_map = i, float(final)
    return index_to_config(best_index, catalog.spaces), best_map


def g_per_phase_table(catalog: Catalog, spec: SyntheticTrainerSpec) -> np.ndarray:
    """(joint_space_size, 3) table of g values, for enumeration-style checks."""
    size = joint_space_size(catalog.spaces)
    table = np.zeros((size, 3))
    for i in range(size):
        names = catalog.names_for(index_to_config(i, catalog.spaces))
        for phase in range(3):
            table[i, phase] = spec.g(names, phase)
    return table
