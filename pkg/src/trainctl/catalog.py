"""Discrete strategy spaces for the four controller agents.

Each agent owns one component of the joint configuration: data augmentation,
optimizer, learning-rate schedule, and loss function. The catalog is immutable
after construction and safe to share across runs.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources

__all__ = [
    "Component",
    "StrategyDescriptor",
    "ActionSpace",
    "JointConfig",
    "Catalog",
    "build_default_catalog",
    "load_catalog",
    "joint_space_size",
    "config_to_index",
    "index_to_config",
]


class Component(str, Enum):
    AUG = "aug"
    OPT = "opt"
    LRS = "lrs"
    LOSS = "loss"


COMPONENT_ORDER = (Component.AUG, Component.OPT, Component.LRS, Component.LOSS)


@dataclass(frozen=True, slots=True)
class StrategyDescriptor:
    id: int
    name: str
    component: Component
    cost: float = 0.0

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"strategy id must be non-negative, got {self.id}")
        if self.cost < 0:
            raise ValueError(f"strategy cost must be non-negative, got {self.cost}")


@dataclass(frozen=True, slots=True)
class ActionSpace:
    component: Component
    strategies: tuple[StrategyDescriptor, ...]

    def __post_init__(self) -> None:
        if len(self.strategies) < 2:
            raise ValueError(f"{self.component.value}: action space needs >= 2 strategies")
        ids = [s.id for s in self.strategies]
        if ids != list(range(len(self.strategies))):
            raise ValueError(f"{self.component.value}: ids must be contiguous 0..M-1")
        names = [s.name for s in self.strategies]
        if len(set(names)) != len(names):
            raise ValueError(f"{self.component.value}: duplicate strategy names")

    @property
    def size(self) -> int:
        return len(self.strategies)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.strategies)

    def by_name(self, name: str) -> StrategyDescriptor:
        for s in self.strategies:
            if s.name == name:
                return s
        raise KeyError(f"{self.component.value}: unknown strategy {name!r}")


@dataclass(frozen=True, slots=True)
class JointConfig:
    """One action per component, by id. The tuple applied for one decision step."""

    aug: int
    opt: int
    lrs: int
    loss: int

    def component_ids(self) -> tuple[int, int, int, int]:
        return (self.aug, self.opt, self.lrs, self.loss)


@dataclass(frozen=True, slots=True)
class Catalog:
    spaces: tuple[ActionSpace, ...]

    def __post_init__(self) -> None:
        got = tuple(s.component for s in self.spaces)
        if got != COMPONENT_ORDER:
            raise ValueError(f"spaces must be ordered {COMPONENT_ORDER}, got {got}")

    def space(self, component: Component) -> ActionSpace:
        return self.spaces[list(COMPONENT_ORDER).index(component)]

    def validate(self, c: JointConfig) -> None:
        for space, aid in zip(self.spaces, c.component_ids()):
            if not 0 <= aid < space.size:
                raise ValueError(f"{space.component.value}: action id {aid} out of range")

    def names_for(self, c: JointConfig) -> dict[str, str]:
        self.validate(c)
        return {
            space.component.value: space.strategies[aid].name
            for space, aid in zip(self.spaces, c.component_ids())
        }

    def config_from_names(self, names: dict[str, str]) -> JointConfig:
        ids = [space.by_name(names[space.component.value]).id for space in self.spaces]
        return JointConfig(*ids)

    def cost_of(self, c: JointConfig) -> float:
        self.validate(c)
        return sum(
            space.strategies[aid].cost
            for space, aid in zip(self.spaces, c.component_ids())
        )

    def digest(self) -> str:
        """Stable hash of names and costs, used for handshake sanity checks."""
        canon = json.dumps(
            [
                {"component": s.component.value, "name": d.name, "cost": d.cost}
                for s in self.spaces
                for d in s.strategies
            ],
            separators=(",", ":"),
            sort_keys=True,
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _space(component: Component, entries: list[tuple[str, float]]) -> ActionSpace:
    return ActionSpace(
        component=component,
        strategies=tuple(
            StrategyDescriptor(id=i, name=name, component=component, cost=cost)
            for i, (name, cost) in enumerate(entries)
        ),
    )


def build_default_catalog() -> Catalog:
    """Catalog shipped with the package, loaded from the bundled data file."""
    with resources.files("trainctl.data").joinpath("strategies.json").open("rb") as fh:
        return _catalog_from_obj(json.load(fh))


def load_catalog(path: str) -> Catalog:
    with open(path, "rb") as fh:
        return _catalog_from_obj(json.load(fh))


def _catalog_from_obj(obj: dict) -> Catalog:
    if obj.get("version") != 1:
        raise ValueError(f"unsupported catalog schema version {obj.get('version')!r}")
    rows = obj["strategies"]
    spaces = []
    for component in COMPONENT_ORDER:
        entries = [(r["name"], float(r["cost"])) for r in rows if r["component"] == component.value]
        spaces.append(_space(component, entries))
    return Catalog(spaces=tuple(spaces))


def joint_space_size(spaces: list[ActionSpace] | tuple[ActionSpace, ...]) -> int:
    if not spaces:
        raise ValueError("joint_space_size needs at least one action space")
    n = 1
    for s in spaces:
        n *= s.size
    return n


def config_to_index(c: JointConfig, spaces: tuple[ActionSpace, ...]) -> int:
    """Mixed-radix encoding, augmentation most significant."""
    index = 0
    for space, aid in zip(spaces, c.component_ids()):
        if not 0 <= aid < space.size:
            raise ValueError(f"{space.component.value}: action id {aid} out of range")
        index = index * space.size + aid
    return index


def index_to_config(i: int, spaces: tuple[ActionSpace, ...]) -> JointConfig:
    if not 0 <= i < joint_space_size(spaces):
        raise ValueError(f"joint index {i} out of range")
    ids = [0, 0, 0, 0]
    rem = i
    for pos in range(len(spaces) - 1, -1, -1):
        rem, ids[pos] = divmod(rem, spaces[pos].size)
    return JointConfig(*ids)
