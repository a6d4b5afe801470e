"""Communicating defender agents for a networked cyber-defence training game.

A deterministic multi-subnet attack/defence simulator, a differentiable
inter-agent learner with a one-bit message channel and strategic action
unmasking, a QMix value-factorization baseline, and a prisoners-and-switch
validation task for the communication core.
"""

__version__ = "0.1.0"

from .scenario import (DetectionProfile, HostSpec, PenaltyTable, Role,
                       ScenarioConfig, SubnetKind, SubnetSpec, builtin_scenario,
                       load_scenario, serialize_scenario)

__all__ = [
    "DetectionProfile", "HostSpec", "PenaltyTable", "Role", "ScenarioConfig",
    "SubnetKind", "SubnetSpec", "builtin_scenario", "load_scenario",
    "serialize_scenario", "__version__",
]
