"""Sequential (recycled) Bell nonlocality in quantum star networks.

A central party shares one maximally entangled pair with each of ``m``
branches. Every branch relays its qubit through a chain of parties that make
unsharp Pauli measurements, and any selection of one party per branch can be
tested against the network Bell inequality ``|I|^(1/m) + |J|^(1/m) <= 1``.
"""

__version__ = "0.1.0"

from .bell import (
    BellReport,
    ChshPair,
    JointDistribution,
    bell_value,
    chsh_pair,
    closed_form_s,
    deterministic_max_s,
    joint_distribution,
    projective_bound,
)
from .network import (
    BranchConfig,
    ConfigError,
    NetworkConfig,
    PartySetting,
    SourceSpec,
    enumerate_selections,
    load_config,
    reference_config,
    subnetwork,
    symmetric_config,
    validate,
)
from .optimizer import OptimizationProblem, OptimizationResult, optimize, worst_case_objective
from .sampler import CountTable, ShotRecord, estimate_bell, experiment_report, sample_run

__all__ = [
    "BellReport",
    "BranchConfig",
    "ChshPair",
    "ConfigError",
    "CountTable",
    "JointDistribution",
    "NetworkConfig",
    "OptimizationProblem",
    "OptimizationResult",
    "PartySetting",
    "ShotRecord",
    "SourceSpec",
    "bell_value",
    "chsh_pair",
    "closed_form_s",
    "deterministic_max_s",
    "enumerate_selections",
    "estimate_bell",
    "experiment_report",
    "joint_distribution",
    "load_config",
    "optimize",
    "reference_config",
    "projective_bound",
    "sample_run",
    "subnetwork",
    "symmetric_config",
    "validate",
    "worst_case_objective",
]
