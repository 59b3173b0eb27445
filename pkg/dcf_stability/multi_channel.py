from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from twisted.logger import Logger

from .common import DomainError, InfeasibleError, ParameterError
from .core import ArrivalVector, ChannelSpec, FloatArray, SystemParams
from .single_channel import (
    InitialCondition,
    SolverOptions,
    channel_view,
    damped_iteration,
    embedded_utilization,
    utilization,
)
from .slotstats import EffectiveSlotCosts, effective_costs

log = Logger()

DISTRIBUTION_TOLERANCE = 1e-9


def as_distribution(values: ArrayLike, what: str) -> FloatArray:
    q = np.array(values, dtype=np.float64).reshape(-1)
    if q.size == 0:
        msg = f"{what} needs at least one channel"
        raise ParameterError(msg)
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        msg = f"{what} entries must be finite and non-negative, got {q.tolist()}"
        raise ParameterError(msg)
    if abs(q.sum() - 1.0) > DISTRIBUTION_TOLERANCE:
        msg = f"{what} must sum to 1, got {q.sum():.12g}"
        raise ParameterError(msg)
    return q


@dataclass(frozen=True)
class UnbiasedPolicy:
    """A switching policy inducing the same n-slot occupancy q at every node."""

    q: FloatArray

    @classmethod
    def of(cls, q: ArrayLike) -> "UnbiasedPolicy":
        return cls(q=as_distribution(q, "occupancy distribution"))

    @classmethod
    def equi_occupancy(cls, n_channels: int) -> "UnbiasedPolicy":
        return cls(q=np.full(n_channels, 1.0 / n_channels))

    @property
    def n_channels(self) -> int:
        return int(self.q.size)


@dataclass(frozen=True)
class OccupancyProfile:
    q: FloatArray
    q_hat: FloatArray
    q_tilde: FloatArray


@dataclass(frozen=True)
class MultiFixedPointState:
    tau: FloatArray
    p: FloatArray
    wbar: FloatArray
    rho: FloatArray
    rho_hat: FloatArray
    occupancy: list[OccupancyProfile]
    residual: float
    iterations: int
    ic_label: str

    @property
    def stable(self) -> bool:
        return bool(np.all(self.rho < 1.0))


def _cross_channel(q: FloatArray, present: FloatArray) -> FloatArray:
    k = q.shape[-1]
    off_diagonal = 1.0 - np.eye(k)
    return (q * present) @ off_diagonal


def occupancy_hat_rows(q: FloatArray, present: FloatArray, absent: FloatArray) -> FloatArray:
    return q / (q + _cross_channel(q, present) / absent)


def occupancy_hat_from_n(
    q: ArrayLike, mean_slot_present: ArrayLike, mean_slot_absent: ArrayLike
) -> FloatArray:
    """c-slot occupancy profile from the n-slot occupancy distribution."""
    dist = as_distribution(q, "occupancy distribution")
    present = np.array(mean_slot_present, dtype=np.float64).reshape(-1)
    absent = np.array(mean_slot_absent, dtype=np.float64).reshape(-1)
    if present.shape != dist.shape or absent.shape != dist.shape:
        msg = "slot means must have one entry per channel"
        raise ParameterError(msg)
    if np.any(present <= 0) or np.any(absent <= 0):
        msg = "mean slot lengths must be positive"
        raise DomainError(msg)
    return occupancy_hat_rows(dist, present, absent)


def occupancy_n_from_hat(
    q_hat: ArrayLike, mean_slot_present: ArrayLike, mean_slot_absent: ArrayLike
) -> FloatArray:
    """Inverse of occupancy_hat_from_n, solved as a normalized linear system."""
    hat = np.array(q_hat, dtype=np.float64).reshape(-1)
    present = np.array(mean_slot_present, dtype=np.float64).reshape(-1)
    absent = np.array(mean_slot_absent, dtype=np.float64).reshape(-1)
    if np.any(present <= 0) or np.any(absent <= 0):
        msg = "mean slot lengths must be positive"
        raise DomainError(msg)
    k = hat.size
    ratio = present[np.newaxis, :] / absent[:, np.newaxis]
    system = -hat[:, np.newaxis] * ratio
    np.fill_diagonal(system, 1.0 - hat)
    lhs = np.vstack([system, np.ones((1, k))])
    rhs = np.concatenate([np.zeros(k), [1.0]])
    q, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return np.clip(q, 0.0, None)


def occupancy_n_from_packet(
    q_tilde: ArrayLike, wbar: ArrayLike, p: ArrayLike, rho_hat: ArrayLike
) -> FloatArray:
    dist = as_distribution(q_tilde, "packet assignment distribution")
    wbar_v = np.array(wbar, dtype=np.float64).reshape(-1)
    p_v = np.array(p, dtype=np.float64).reshape(-1)
    rho_hat_v = np.array(rho_hat, dtype=np.float64).reshape(-1)
    active = dist > 0
    if np.any(p_v[active] >= 1):
        msg = "collision probability must be < 1 on assigned channels"
        raise DomainError(msg)
    if np.any(rho_hat_v[active] <= 0):
        msg = "embedded utilization must be positive on every assigned channel"
        raise DomainError(msg)
    weights = np.zeros_like(dist)
    busy_period = wbar_v[active] / (1.0 - p_v[active])
    weights[active] = dist[active] * busy_period / rho_hat_v[active]
    return weights / weights.sum()


def packet_from_occupancy(
    q: ArrayLike, wbar: ArrayLike, p: ArrayLike, rho_hat: ArrayLike
) -> FloatArray:
    """Packet share per channel; falls back to q when no channel serves packets."""
    dist = np.array(q, dtype=np.float64).reshape(-1)
    wbar_v = np.array(wbar, dtype=np.float64).reshape(-1)
    p_v = np.array(p, dtype=np.float64).reshape(-1)
    rho_hat_v = np.array(rho_hat, dtype=np.float64).reshape(-1)
    weights = dist * (1.0 - p_v) * rho_hat_v / wbar_v
    total = weights.sum()
    if not total > 0:
        return dist.copy()
    return weights / total


@dataclass(frozen=True)
class _SigmaGMap:
    lam: ArrivalVector
    q: FloatArray
    params: SystemParams
    chans: tuple[ChannelSpec, ...]
    costs: tuple[EffectiveSlotCosts, ...]
    options: SolverOptions

    def evaluate(
        self, tau: FloatArray, rho_hat: FloatArray
    ) -> dict[str, FloatArray]:
        views = [
            channel_view(tau[:, k], self.params, chan, costs)
            for k, (chan, costs) in enumerate(zip(self.chans, self.costs, strict=True))
        ]
        absent = np.stack([v.slots.e_s_qbar for v in views], axis=1)
        busy = np.stack([v.slots.e_s_q for v in views], axis=1)
        present = rho_hat * busy + (1.0 - rho_hat) * absent
        q_hat = occupancy_hat_rows(self.q[np.newaxis, :], present, absent)
        per_packet = np.stack([v.per_packet for v in views], axis=1)
        with np.errstate(invalid="ignore"):
            weighted = np.where(q_hat > 0, q_hat * per_packet, 0.0).sum(axis=1)
        rho = utilization(self.lam.rates, weighted, self.params.payload_bits)
        next_rho_hat = np.stack(
            [embedded_utilization(rho, v.slots, self.options.rho_hat_mode) for v in views],
            axis=1,
        )
        wbar = np.stack([v.wbar for v in views], axis=1)
        return {
            "tau": q_hat * next_rho_hat / wbar,
            "rho_hat": next_rho_hat,
            "rho": rho,
            "q_hat": q_hat,
            "p": np.stack([v.p for v in views], axis=1),
            "wbar": wbar,
        }

    def __call__(
        self, tau: FloatArray, rho_hat: FloatArray
    ) -> tuple[FloatArray, FloatArray]:
        out = self.evaluate(tau, rho_hat)
        return out["tau"], out["rho_hat"]


def solve_sigma_g(
    lam: ArrivalVector,
    policy: UnbiasedPolicy,
    params: SystemParams,
    chans: Sequence[ChannelSpec],
    ic: InitialCondition,
    options: SolverOptions | None = None,
) -> MultiFixedPointState:
    """Multi-channel fixed point under an unbiased policy.

    The state iterated is (τ, ρ̂) per node and channel; the channel-present
    mean slot used by the c-slot occupancy conversion takes the previous
    iterate's ρ̂, so the initial condition's ρ0 seeds it.
    """
    options = options or SolverOptions()
    if len(chans) != policy.n_channels:
        msg = f"policy has {policy.n_channels} channels, {len(chans)} channel specs given"
        raise ParameterError(msg)
    n = len(lam)
    ic.check(n)
    k = policy.n_channels
    step = _SigmaGMap(
        lam=lam,
        q=policy.q,
        params=params,
        chans=tuple(chans),
        costs=tuple(effective_costs(params, c) for c in chans),
        options=options,
    )
    tau0 = np.repeat(ic.tau0.astype(np.float64)[:, np.newaxis], k, axis=1)
    rho_hat0 = np.repeat(ic.rho0.astype(np.float64)[:, np.newaxis], k, axis=1)
    tau, rho_hat, residual, iterations = damped_iteration(
        tau0, rho_hat0, step, options, f"{k}-channel fixed point from the {ic.label} initial condition"
    )
    final = step.evaluate(tau, rho_hat)
    log.debug(
        "{k}-channel fixed point from {label} converged in {iterations} iterations",
        k=k,
        label=ic.label,
        iterations=iterations,
    )
    occupancy = [
        OccupancyProfile(
            q=policy.q.copy(),
            q_hat=final["q_hat"][i],
            q_tilde=packet_from_occupancy(
                policy.q, final["wbar"][i], final["p"][i], final["rho_hat"][i]
            ),
        )
        for i in range(n)
    ]
    return MultiFixedPointState(
        tau=tau,
        p=final["p"],
        wbar=final["wbar"],
        rho=final["rho"],
        rho_hat=final["rho_hat"],
        occupancy=occupancy,
        residual=residual,
        iterations=iterations,
        ic_label=ic.label,
    )


@dataclass(frozen=True)
class UnbiasedTildeSolution:
    tau: FloatArray
    rho: FloatArray

    @property
    def stable(self) -> bool:
        return bool(np.all(self.rho < 1.0))


def _unbiased_coefficients(
    lam: ArrivalVector, params: SystemParams, t: float
) -> tuple[FloatArray, FloatArray]:
    own = lam.rates * ((params.window - 1) * params.sigma / 2.0 + t) / params.payload_bits
    coupling = lam.rates * t / params.payload_bits
    return own, coupling


def solve_sigma_g_tilde(
    lam: ArrivalVector, policy: UnbiasedPolicy, params: SystemParams, t: float
) -> UnbiasedTildeSolution:
    """Closed form of the large-window system for symmetric channels.

    ρ_i = a_i + b_i·s·Σ_{j≠i} ρ_j with s = Σ_k q_k², solved linearly;
    τ_i^(k) = 2 q_k ρ_i / (W+1).
    """
    if not t > 0:
        msg = f"slot cost must be positive, got {t}"
        raise ParameterError(msg)
    own, coupling = _unbiased_coefficients(lam, params, t)
    spread = float(np.sum(policy.q**2))
    scaled = coupling * spread
    feedback = float(np.sum(scaled / (1.0 + scaled)))
    if feedback >= 1.0:
        msg = f"unbiased closed form is infeasible: feedback {feedback:.6g} >= 1"
        raise InfeasibleError(msg)
    total = float(np.sum(own / (1.0 + scaled))) / (1.0 - feedback)
    rho = (own + scaled * total) / (1.0 + scaled)
    tau = 2.0 * policy.q[np.newaxis, :] * rho[:, np.newaxis] / (params.window + 1)
    return UnbiasedTildeSolution(tau=tau, rho=rho)


def unbiased_stable(
    lam: ArrivalVector, policy: UnbiasedPolicy, params: SystemParams, t: float
) -> bool:
    try:
        return solve_sigma_g_tilde(lam, policy, params, t).stable
    except InfeasibleError:
        return False


@dataclass(frozen=True)
class EquiOccupancyGap:
    gap: FloatArray
    spread: float
    uniform_spread: float
    convexity_weight: FloatArray
    # closed-form ρ under q minus ρ under uniform occupancy, NaN when infeasible
    rho_difference: FloatArray


def equi_occupancy_gap(
    lam: ArrivalVector, q: ArrayLike, params: SystemParams, t: float
) -> EquiOccupancyGap:
    """Per-node utilization excess of occupancy q over the uniform occupancy.

    Both sides are evaluated with the convexity weights 2ρ_j/(W+1) of the
    solution under q (ρ_j capped at 1, or 1 when the closed form is infeasible).
    """
    policy = UnbiasedPolicy.of(q)
    k = policy.n_channels
    try:
        rho_q = solve_sigma_g_tilde(lam, policy, params, t).rho
        rho = np.minimum(rho_q, 1.0)
    except InfeasibleError:
        rho_q = np.full(len(lam), np.nan)
        rho = np.ones(len(lam))
    try:
        rho_uniform = solve_sigma_g_tilde(
            lam, UnbiasedPolicy.equi_occupancy(k), params, t
        ).rho
    except InfeasibleError:
        rho_uniform = np.full(len(lam), np.nan)
    convexity_weight = 2.0 * rho / (params.window + 1)
    theta = lam.rates * (params.window + 1) * t / (2.0 * params.payload_bits)
    others = convexity_weight.sum() - convexity_weight
    spread = float(np.sum(policy.q**2))
    uniform_spread = k * (1.0 / k) ** 2
    return EquiOccupancyGap(
        gap=theta * others * (spread - uniform_spread),
        spread=spread,
        uniform_spread=uniform_spread,
        convexity_weight=convexity_weight,
        rho_difference=rho_q - rho_uniform,
    )
