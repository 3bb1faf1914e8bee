"""Simulation harness: scenarios, experiments and the CLI."""

from .experiments import (
    HEADER,
    binomial_threshold,
    coverage_experiment,
    martingale_validate,
    regret_audit,
    rows_to_csv,
    shifted_martingale_validate,
    width_experiment,
    write_csv,
)
from .scenario import ScenarioConfig, draw_theta_star, generate_replication, geometric_checkpoints, stream

__all__ = [
    "HEADER",
    "ScenarioConfig",
    "binomial_threshold",
    "coverage_experiment",
    "draw_theta_star",
    "generate_replication",
    "geometric_checkpoints",
    "martingale_validate",
    "regret_audit",
    "rows_to_csv",
    "shifted_martingale_validate",
    "stream",
    "width_experiment",
    "write_csv",
]
