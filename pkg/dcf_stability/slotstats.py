from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from .common import DomainError, ParameterError
from .core import ChannelSpec, CollisionModel, FloatArray, SystemParams


@dataclass(frozen=True)
class EffectiveSlotCosts:
    l_idle: float
    l_succ: float
    l_coll: float


@dataclass(frozen=True)
class SlotLengths:
    """Mean slot lengths seen by one node (seconds)."""

    e_s_q: float
    e_s_qbar: float
    e_s_q_notx: float


@dataclass(frozen=True)
class SlotOutcome:
    idle: float
    succ: float
    coll: float


@dataclass(frozen=True)
class OutcomeProbabilities:
    queue_empty: SlotOutcome
    queue_busy: SlotOutcome


@dataclass(frozen=True)
class SlotLengthTable:
    """Vectorized SlotLengths for every node of one channel."""

    e_s_q: FloatArray
    e_s_qbar: FloatArray
    e_s_q_notx: FloatArray

    def node(self, i: int) -> SlotLengths:
        return SlotLengths(
            e_s_q=float(self.e_s_q[i]),
            e_s_qbar=float(self.e_s_qbar[i]),
            e_s_q_notx=float(self.e_s_q_notx[i]),
        )


def effective_costs(params: SystemParams, chan: ChannelSpec) -> EffectiveSlotCosts:
    if params.collision_model is CollisionModel.BIANCHI:
        return EffectiveSlotCosts(l_idle=params.sigma, l_succ=chan.t_s, l_coll=chan.t_c)
    w = float(params.window)
    if w < 2:
        msg = f"successive-attempt costs need W >= 2, got {params.window}"
        raise DomainError(msg)
    # runs of back-to-back attempts, collisions of three or more nodes ignored
    return EffectiveSlotCosts(
        l_idle=params.sigma,
        l_succ=chan.t_s / (1.0 - 1.0 / w),
        l_coll=chan.t_c / (1.0 - (1.0 / w) ** 2) + 2.0 * chan.t_s / (w - 1.0 / w),
    )


def others_activity(tau: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Per node i: P(no other node transmits), P(exactly one other node transmits).

    Products are formed directly, so entries equal to one are allowed.
    """
    n = tau.shape[0]
    silent = 1.0 - tau
    eye = np.eye(n, dtype=bool)
    idle = np.where(eye, 1.0, silent[np.newaxis, :]).prod(axis=1)
    # pair_idle[i, j] = prod over l not in {i, j} of (1 - tau_l)
    excluded = eye[:, np.newaxis, :] | eye[np.newaxis, :, :]
    pair_idle = np.where(excluded, 1.0, silent[np.newaxis, np.newaxis, :]).prod(axis=2)
    single = np.where(eye, 0.0, tau[np.newaxis, :] * pair_idle).sum(axis=1)
    return idle, single


def slot_length_table(
    tau: FloatArray, tau_q: FloatArray, costs: EffectiveSlotCosts
) -> SlotLengthTable:
    idle, single = others_activity(tau)
    coll = 1.0 - idle - single
    e_absent = costs.l_idle * idle + costs.l_succ * single + costs.l_coll * coll
    idle_q = (1.0 - tau_q) * idle
    succ_q = tau_q * idle + (1.0 - tau_q) * single
    coll_q = 1.0 - idle_q - succ_q
    e_present = costs.l_idle * idle_q + costs.l_succ * succ_q + costs.l_coll * coll_q
    # a node that counts down but stays silent sees the same slots as an absent one
    return SlotLengthTable(e_s_q=e_present, e_s_qbar=e_absent, e_s_q_notx=e_absent)


def _checked_inputs(i: int, tau: ArrayLike, tau_q_i: float) -> FloatArray:
    values = np.array(tau, dtype=np.float64).reshape(-1)
    if not 0 <= i < values.size:
        msg = f"node index {i} out of range for {values.size} nodes"
        raise ParameterError(msg)
    if np.any(values < 0) or np.any(values >= 1) or np.any(np.isnan(values)):
        msg = f"attempt probabilities must lie in [0, 1), got {values.tolist()}"
        raise DomainError(msg)
    if not 0 < tau_q_i <= 1:
        msg = f"conditional attempt probability must lie in (0, 1], got {tau_q_i}"
        raise DomainError(msg)
    return values


def outcome_probabilities(i: int, tau: ArrayLike, tau_q_i: float) -> OutcomeProbabilities:
    values = _checked_inputs(i, tau, tau_q_i)
    idle, single = others_activity(values)
    empty = SlotOutcome(
        idle=float(idle[i]), succ=float(single[i]), coll=float(1.0 - idle[i] - single[i])
    )
    idle_q = (1.0 - tau_q_i) * idle[i]
    succ_q = tau_q_i * idle[i] + (1.0 - tau_q_i) * single[i]
    busy = SlotOutcome(
        idle=float(idle_q), succ=float(succ_q), coll=float(1.0 - idle_q - succ_q)
    )
    return OutcomeProbabilities(queue_empty=empty, queue_busy=busy)


def conditional_slot_lengths(
    i: int, tau: ArrayLike, tau_q_i: float, costs: EffectiveSlotCosts
) -> SlotLengths:
    values = _checked_inputs(i, tau, tau_q_i)
    tau_q = np.full_like(values, tau_q_i)
    return slot_length_table(values, tau_q, costs).node(i)


def rho_hat_ratio(rho: FloatArray, e_s_qbar: FloatArray, e_s_q: FloatArray) -> FloatArray:
    return rho * e_s_qbar / (rho * e_s_qbar + (1.0 - rho) * e_s_q)


def rho_hat_hat(rho: float, slots: SlotLengths) -> float:
    """Slot-embedded utilization approximated from the time utilization `rho`."""
    if not 0 <= rho <= 1:
        msg = f"utilization must lie in [0, 1], got {rho}"
        raise DomainError(msg)
    if slots.e_s_qbar <= 0 or slots.e_s_q <= 0:
        msg = f"slot lengths must be positive, got {slots}"
        raise DomainError(msg)
    return float(
        rho_hat_ratio(
            np.asarray(rho), np.asarray(slots.e_s_qbar), np.asarray(slots.e_s_q)
        )
    )
