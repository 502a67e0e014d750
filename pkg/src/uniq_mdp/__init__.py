"""Tabular avoidance learning: train soft-Q policies that stay away from an
undesired occupancy measure, plus imitation baselines, gridworld benchmarks,
an evaluation harness and brute-force verification oracles."""

from uniq_mdp.mdp import (
    FiniteMdp,
    OccupancyMeasure,
    QTable,
    TabularPolicy,
    inverse_bellman,
    occupancy_of,
    soft_bellman,
    soft_value_iteration,
    soft_value_of_q,
    softmax_policy,
)

__version__ = "0.1.0"

__all__ = [
    "FiniteMdp",
    "TabularPolicy",
    "OccupancyMeasure",
    "QTable",
    "occupancy_of",
    "soft_value_of_q",
    "softmax_policy",
    "soft_bellman",
    "inverse_bellman",
    "soft_value_iteration",
    "__version__",
]
