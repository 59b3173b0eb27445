import enum
from dataclasses import dataclass
from typing import overload

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import optimize

from .common import DomainError, ParameterError

MICROSECOND = 1e-6

FloatArray = NDArray[np.float64]


class CollisionModel(enum.Enum):
    BIANCHI = "bianchi"
    FACS = "facs"


@dataclass(frozen=True)
class SystemParams:
    """MAC/PHY constants shared by every channel. Durations are in seconds."""

    window: int = 32
    max_stage: int = 5
    sigma: float = 20 * MICROSECOND
    difs: float = 50 * MICROSECOND
    sifs: float = 10 * MICROSECOND
    ack_time: float = 203 * MICROSECOND
    header_time: float = 192 * MICROSECOND
    prop_delay: float = 1 * MICROSECOND
    payload_bits: float = 12000.0
    collision_model: CollisionModel = CollisionModel.BIANCHI

    def __post_init__(self) -> None:
        if self.window < 2:
            msg = f"initial backoff window must be >= 2, got {self.window}"
            raise ParameterError(msg)
        if self.max_stage < 0:
            msg = f"maximum backoff stage must be >= 0, got {self.max_stage}"
            raise ParameterError(msg)
        if not self.sigma > 0:
            msg = f"slot duration must be positive, got {self.sigma}"
            raise ParameterError(msg)
        for name in ("difs", "sifs", "ack_time", "header_time", "prop_delay"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                msg = f"{name} must be a finite non-negative duration, got {value}"
                raise ParameterError(msg)
        if not self.payload_bits > 0:
            msg = f"payload must be positive, got {self.payload_bits}"
            raise ParameterError(msg)


@dataclass(frozen=True)
class ChannelSpec:
    bandwidth: float
    t_s: float
    t_c: float


@dataclass(frozen=True)
class SaturatedPoint:
    tau: float
    p: float


class ArrivalVector:
    """Per-node Poisson arrival rates in bits/second."""

    def __init__(self, rates: ArrayLike) -> None:
        values = np.array(rates, dtype=np.float64).reshape(-1)
        if values.size == 0:
            msg = "arrival vector needs at least one node"
            raise ParameterError(msg)
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            msg = f"arrival rates must be finite and non-negative, got {values.tolist()}"
            raise ParameterError(msg)
        values.flags.writeable = False
        self.rates: FloatArray = values

    def __len__(self) -> int:
        return int(self.rates.size)

    def __repr__(self) -> str:
        return f"ArrivalVector({self.rates.tolist()})"

    def replace(self, index: int, value: float) -> "ArrivalVector":
        rates = self.rates.copy()
        rates[index] = value
        return ArrivalVector(rates)


def dot11b_params() -> SystemParams:
    return SystemParams()


def derive_timing(params: SystemParams, bandwidth: float) -> ChannelSpec:
    """Basic-access success and collision slot durations at `bandwidth`."""
    if not (np.isfinite(bandwidth) and bandwidth > 0):
        msg = f"bandwidth must be positive, got {bandwidth}"
        raise ParameterError(msg)
    airtime = params.payload_bits / bandwidth + params.header_time
    t_s = (
        airtime
        + params.ack_time
        + params.difs
        + params.sifs
        + 2 * params.prop_delay
    )
    t_c = airtime + params.difs + params.prop_delay
    if t_c <= params.sigma:
        msg = f"collision slot {t_c} s must exceed the idle slot {params.sigma} s"
        raise ParameterError(msg)
    return ChannelSpec(bandwidth=bandwidth, t_s=t_s, t_c=t_c)


def backoff_window_unchecked(p: FloatArray, params: SystemParams) -> FloatArray:
    # term-by-term so that 2p = 1 needs no special case; finite at p = 1
    two_p = 2.0 * p
    partial = np.zeros_like(p)
    term = np.ones_like(p)
    for _ in range(params.max_stage):
        partial = partial + term
        term = term * two_p
    return 0.5 * (params.window * ((1.0 - p) * partial + term) + 1.0)


@overload
def avg_backoff_window(p: float, params: SystemParams) -> float: ...


@overload
def avg_backoff_window(p: FloatArray, params: SystemParams) -> FloatArray: ...


def avg_backoff_window(
    p: float | FloatArray, params: SystemParams
) -> float | FloatArray:
    """Expected number of backoff slots per transmission attempt."""
    values = np.asarray(p, dtype=np.float64)
    if np.any(values < 0) or np.any(values >= 1) or np.any(np.isnan(values)):
        msg = f"collision probability must lie in [0, 1), got {p}"
        raise DomainError(msg)
    wbar = backoff_window_unchecked(values, params)
    if wbar.ndim == 0:
        return float(wbar)
    return wbar


def saturated_tau(params: SystemParams, n_nodes: int) -> SaturatedPoint:
    """Saturated attempt and collision probabilities of `n_nodes` identical nodes."""
    if n_nodes < 1:
        msg = f"node count must be >= 1, got {n_nodes}"
        raise ParameterError(msg)
    if n_nodes == 1:
        return SaturatedPoint(tau=2.0 / (params.window + 1), p=0.0)

    def attempt(p: float) -> float:
        return float(1.0 / backoff_window_unchecked(np.asarray(p), params))

    def excess(p: float) -> float:
        return p - (1.0 - (1.0 - attempt(p)) ** (n_nodes - 1))

    # excess(0) <= 0 and excess(1) = (1 - tau(1))^(N-1) > 0
    p_star = float(optimize.brentq(excess, 0.0, 1.0, xtol=1e-14, rtol=4e-16))
    return SaturatedPoint(tau=attempt(p_star), p=p_star)


def single_node_capacity(params: SystemParams, chan: ChannelSpec) -> float:
    wbar = avg_backoff_window(0.0, params)
    return params.payload_bits / ((wbar - 1.0) * params.sigma + chan.t_s)


def saturated_throughput(params: SystemParams, chan: ChannelSpec, n_nodes: int) -> float:
    """Aggregate saturated throughput in bits/second."""
    point = saturated_tau(params, n_nodes)
    idle = (1.0 - point.tau) ** n_nodes
    success = n_nodes * point.tau * (1.0 - point.tau) ** (n_nodes - 1)
    collision = 1.0 - idle - success
    mean_slot = idle * params.sigma + success * chan.t_s + collision * chan.t_c
    return success * params.payload_bits / mean_slot
