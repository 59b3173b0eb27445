from .common import (
    ConfigError,
    DcfStabilityError,
    DomainError,
    InfeasibleError,
    NonConvergenceError,
    ParameterError,
)
from .core import (
    ArrivalVector,
    ChannelSpec,
    CollisionModel,
    SystemParams,
    avg_backoff_window,
    derive_timing,
    dot11b_params,
    saturated_tau,
)
from .multi_channel import UnbiasedPolicy, solve_sigma_g, solve_sigma_g_tilde
from .single_channel import (
    InitialCondition,
    SolverOptions,
    Verdict,
    classify,
    solve_sigma,
    solve_sigma_tilde,
)

__all__ = [
    "ArrivalVector",
    "ChannelSpec",
    "CollisionModel",
    "ConfigError",
    "DcfStabilityError",
    "DomainError",
    "InfeasibleError",
    "InitialCondition",
    "NonConvergenceError",
    "ParameterError",
    "SolverOptions",
    "SystemParams",
    "UnbiasedPolicy",
    "Verdict",
    "avg_backoff_window",
    "classify",
    "derive_timing",
    "dot11b_params",
    "saturated_tau",
    "solve_sigma",
    "solve_sigma_g",
    "solve_sigma_g_tilde",
    "solve_sigma_tilde",
]
