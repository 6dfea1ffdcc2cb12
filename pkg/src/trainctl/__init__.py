"""Adaptive training-configuration controller.

Four cooperating agents pick the augmentation, optimizer, LR schedule, and
loss for each stage of a training run, learning online from a shared
composite reward. Ships with a seeded surrogate environment, a tabular-MDP
oracle, and a newline-delimited-JSON bridge for driving real trainers.
"""
from .catalog import (
    ActionSpace,
    Catalog,
    Component,
    JointConfig,
    StrategyDescriptor,
    build_default_catalog,
    config_to_index,
    index_to_config,
    joint_space_size,
)
from .coordinator import (
    AblationMask,
    Coordinator,
    DecisionRecord,
    RunConfig,
    RunResult,
    conditional_probability_report,
    selection_frequency_report,
)
from .curiosity import CuriosityConfig, ForwardModel
from .qlearn import AgentConfig, ExplorationSchedule, PolicyKind, StrategyAgent
from .replay import ReplayBuffer, Transition
from .reward import RewardBreakdown, RewardWeights, ShapingParams
from .state import EmaPair, ExtendedState, StateBuilder, TrainingState

__version__ = "0.1.0"
