from .config import NodeSpec, SimConfig
from .engine import GENERATOR, simulate
from .policy import MacEvent, NodeState, PolicyKind, PolicySpec, apply_policy
from .report import (
    NodeMargin,
    SimReport,
    StabilityClassification,
    classify_stability,
    mean_population,
    population_histogram,
)

__all__ = [
    "GENERATOR",
    "MacEvent",
    "NodeMargin",
    "NodeSpec",
    "NodeState",
    "PolicyKind",
    "PolicySpec",
    "SimConfig",
    "SimReport",
    "StabilityClassification",
    "apply_policy",
    "classify_stability",
    "mean_population",
    "population_histogram",
    "simulate",
]
