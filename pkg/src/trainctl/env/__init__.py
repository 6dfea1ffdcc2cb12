"""Environments the controller can drive, plus shared metric formulas."""
from .base import EnvironmentInterface, MetricsReport
from .mdp import TabularMdp, make_random_mdp, policy_iteration, sample_step, value_iteration
from .metrics import (
    compute_average_precision,
    compute_bacc,
    compute_map,
    compute_rare_f1,
    compute_strata_f1,
    f1_at_threshold,
    strata_indices,
)
from .surrogate import (
    RHO_PRESETS,
    SurrogateEnv,
    SyntheticTrainerSpec,
    best_static_config,
    default_spec,
    g_per_phase_table,
    load_spec,
    make_deceptive_spec,
    map_from_loss,
    retention_fraction,
    run_static,
    strata_multipliers,
)

__all__ = [
    "EnvironmentInterface",
    "MetricsReport",
    "TabularMdp",
    "make_random_mdp",
    "policy_iteration",
    "sample_step",
    "value_iteration",
    "compute_average_precision",
    "compute_bacc",
    "compute_map",
    "compute_rare_f1",
    "compute_strata_f1",
    "f1_at_threshold",
    "strata_indices",
    "RHO_PRESETS",
    "SurrogateEnv",
    "SyntheticTrainerSpec",
    "best_static_config",
    "default_spec",
    "g_per_phase_table",
    "load_spec",
    "make_deceptive_spec",
    "map_from_loss",
    "retention_fraction",
    "run_static",
    "strata_multipliers",
]
