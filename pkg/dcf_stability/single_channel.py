import enum
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from twisted.logger import Logger

from .common import DomainError, InfeasibleError, NonConvergenceError, ParameterError
from .core import ArrivalVector, ChannelSpec, FloatArray, SystemParams
from .core import backoff_window_unchecked
from .slotstats import (
    EffectiveSlotCosts,
    SlotLengthTable,
    effective_costs,
    rho_hat_ratio,
    slot_length_table,
)

log = Logger()

NEAR_ONE = 0.999

StepFunction = Callable[[FloatArray, FloatArray], tuple[FloatArray, FloatArray]]


class RhoHatMode(enum.Enum):
    RHO_HAT_HAT = "rho_hat_hat"
    # crude ρ̂ ≈ ρ, kept for the large-window comparison
    RHO = "rho"


class Verdict(enum.Enum):
    STABLE_ALL_IC = "stable_all_ic"
    UNSTABLE_ALL_IC = "unstable_all_ic"
    IC_DEPENDENT = "ic_dependent"


@dataclass(frozen=True)
class SolverOptions:
    damping: float = 0.5
    tolerance: float = 1e-10
    max_iterations: int = 100_000
    ic_grid: int = 0
    rho_hat_mode: RhoHatMode = RhoHatMode.RHO_HAT_HAT
    distinct_threshold: float = 1e-4

    def __post_init__(self) -> None:
        if not 0 < self.damping <= 1:
            msg = f"damping must lie in (0, 1], got {self.damping}"
            raise ParameterError(msg)
        if not self.tolerance > 0:
            msg = f"tolerance must be positive, got {self.tolerance}"
            raise ParameterError(msg)
        if self.max_iterations < 1:
            msg = f"iteration cap must be >= 1, got {self.max_iterations}"
            raise ParameterError(msg)
        if self.ic_grid < 0 or self.ic_grid == 1:
            msg = f"initial-condition grid must be 0 or >= 2, got {self.ic_grid}"
            raise ParameterError(msg)


@dataclass(frozen=True)
class InitialCondition:
    tau0: FloatArray
    rho0: FloatArray
    label: str = "custom"

    @classmethod
    def uniform(cls, n_nodes: int, tau0: float, rho0: float, label: str) -> "InitialCondition":
        return cls(
            tau0=np.full(n_nodes, tau0), rho0=np.full(n_nodes, rho0), label=label
        )

    @classmethod
    def zero(cls, n_nodes: int) -> "InitialCondition":
        return cls.uniform(n_nodes, 0.0, 0.0, "zero")

    @classmethod
    def near_one(cls, n_nodes: int) -> "InitialCondition":
        return cls.uniform(n_nodes, NEAR_ONE, NEAR_ONE, "near_one")

    def check(self, n_nodes: int) -> None:
        for name, values in (("tau0", self.tau0), ("rho0", self.rho0)):
            if values.shape != (n_nodes,):
                msg = f"{name} must have {n_nodes} entries, got shape {values.shape}"
                raise ParameterError(msg)
            if np.any(values < 0) or np.any(values > 1):
                msg = f"{name} entries must lie in [0, 1], got {values.tolist()}"
                raise DomainError(msg)


def default_initial_conditions(n_nodes: int, ic_grid: int = 0) -> list[InitialCondition]:
    ics = [InitialCondition.zero(n_nodes), InitialCondition.near_one(n_nodes)]
    if ic_grid >= 2:
        levels = np.linspace(0.0, NEAR_ONE, ic_grid)
        ics.extend(
            InitialCondition.uniform(n_nodes, float(t), float(r), f"grid_{a}_{b}")
            for a, t in enumerate(levels)
            for b, r in enumerate(levels)
        )
    return ics


@dataclass(frozen=True)
class FixedPointState:
    tau: FloatArray
    p: FloatArray
    wbar: FloatArray
    rho: FloatArray
    rho_hat: FloatArray
    residual: float = float("inf")
    iterations: int = 0
    ic_label: str = ""

    @classmethod
    def start(cls, ic: InitialCondition) -> "FixedPointState":
        n = ic.tau0.shape[0]
        return cls(
            tau=ic.tau0.astype(np.float64),
            p=np.zeros(n),
            wbar=np.ones(n),
            rho=ic.rho0.astype(np.float64),
            rho_hat=ic.rho0.astype(np.float64),
            ic_label=ic.label,
        )

    @property
    def stable(self) -> bool:
        return bool(np.all(self.rho < 1.0))


@dataclass(frozen=True)
class ServiceTimeBreakdown:
    x_bar: FloatArray
    per_packet: FloatArray


@dataclass
class StabilityVerdict:
    verdict: Verdict
    solutions: list[FixedPointState]
    failed: list[str] = field(default_factory=list)

    @property
    def contains(self) -> bool:
        return any(s.stable for s in self.solutions)

    def distinct_solutions(self, threshold: float = 1e-4) -> list[FixedPointState]:
        kept: list[FixedPointState] = []
        for s in self.solutions:
            if all(_state_distance(s, k) > threshold for k in kept):
                kept.append(s)
        return kept


def _state_distance(a: FixedPointState, b: FixedPointState) -> float:
    return float(max(np.max(np.abs(a.tau - b.tau)), np.max(np.abs(a.rho - b.rho))))


def collision_probability(tau: FloatArray) -> FloatArray:
    n = tau.shape[0]
    eye = np.eye(n, dtype=bool)
    return 1.0 - np.where(eye, 1.0, 1.0 - tau[np.newaxis, :]).prod(axis=1)


def per_packet_service(
    wbar: FloatArray,
    p: FloatArray,
    slots: SlotLengthTable,
    chan: ChannelSpec,
) -> FloatArray:
    """Mean seconds to serve one head-of-line packet; infinite when p = 1."""
    with np.errstate(divide="ignore", invalid="ignore"):
        attempts = 1.0 / (1.0 - p)
        countdown = (wbar - 1.0) * attempts * slots.e_s_q_notx
        return countdown + chan.t_c * p * attempts + chan.t_s


def utilization(rates: FloatArray, service: FloatArray, payload_bits: float) -> FloatArray:
    with np.errstate(invalid="ignore"):
        load = rates * service / payload_bits
    return np.where(rates > 0, np.minimum(load, 1.0), 0.0)


def embedded_utilization(
    rho: FloatArray, slots: SlotLengthTable, mode: RhoHatMode
) -> FloatArray:
    if mode is RhoHatMode.RHO:
        return rho.copy()
    return rho_hat_ratio(rho, slots.e_s_qbar, slots.e_s_q)


@dataclass(frozen=True)
class _ChannelView:
    p: FloatArray
    wbar: FloatArray
    slots: SlotLengthTable
    per_packet: FloatArray


def channel_view(
    tau: FloatArray, params: SystemParams, chan: ChannelSpec, costs: EffectiveSlotCosts
) -> _ChannelView:
    p = collision_probability(tau)
    wbar = backoff_window_unchecked(p, params)
    slots = slot_length_table(tau, 1.0 / wbar, costs)
    return _ChannelView(
        p=p, wbar=wbar, slots=slots, per_packet=per_packet_service(wbar, p, slots, chan)
    )


def sigma_step(
    state: FixedPointState,
    lam: ArrivalVector,
    params: SystemParams,
    chan: ChannelSpec,
    mode: RhoHatMode = RhoHatMode.RHO_HAT_HAT,
) -> FixedPointState:
    """Apply the composed map once: p, W̄ and slot lengths from τ, then ρ, ρ̂ and τ'."""
    view = channel_view(state.tau, params, chan, effective_costs(params, chan))
    rho = utilization(lam.rates, view.per_packet, params.payload_bits)
    rho_hat = embedded_utilization(rho, view.slots, mode)
    return replace(
        state, tau=rho_hat / view.wbar, p=view.p, wbar=view.wbar, rho=rho, rho_hat=rho_hat
    )


def service_time(
    state: FixedPointState, params: SystemParams, chan: ChannelSpec
) -> ServiceTimeBreakdown:
    view = channel_view(state.tau, params, chan, effective_costs(params, chan))
    return ServiceTimeBreakdown(
        x_bar=view.per_packet / params.payload_bits, per_packet=view.per_packet
    )


def damped_iteration(
    tau0: FloatArray,
    rho_hat0: FloatArray,
    step: StepFunction,
    options: SolverOptions,
    what: str,
) -> tuple[FloatArray, FloatArray, float, int]:
    """Iterate (τ, ρ̂) ← (1−η)(τ, ρ̂) + η·step(τ, ρ̂) to a max-norm residual below tolerance.

    Shared by the single- and multi-channel solvers so that one channel
    reproduces the single-channel iterates exactly.
    """
    eta = options.damping
    tau = tau0
    rho_hat = rho_hat0
    residual = float("inf")
    for iteration in range(1, options.max_iterations + 1):
        next_tau, next_rho_hat = step(tau, rho_hat)
        residual = float(
            max(np.max(np.abs(next_tau - tau)), np.max(np.abs(next_rho_hat - rho_hat)))
        )
        tau = (1.0 - eta) * tau + eta * next_tau
        rho_hat = (1.0 - eta) * rho_hat + eta * next_rho_hat
        if residual < options.tolerance:
            return tau, rho_hat, residual, iteration
    msg = f"{what} did not converge after {options.max_iterations} iterations (residual {residual:.3e})"
    raise NonConvergenceError(msg, residual, options.max_iterations)


@dataclass(frozen=True)
class _SigmaMap:
    lam: ArrivalVector
    params: SystemParams
    chan: ChannelSpec
    mode: RhoHatMode

    def __call__(
        self, tau: FloatArray, rho_hat: FloatArray
    ) -> tuple[FloatArray, FloatArray]:
        view = channel_view(tau, self.params, self.chan, effective_costs(self.params, self.chan))
        rho = utilization(self.lam.rates, view.per_packet, self.params.payload_bits)
        next_rho_hat = embedded_utilization(rho, view.slots, self.mode)
        return next_rho_hat / view.wbar, next_rho_hat


def solve_sigma(
    lam: ArrivalVector,
    ic: InitialCondition,
    params: SystemParams,
    chan: ChannelSpec,
    options: SolverOptions | None = None,
) -> FixedPointState:
    options = options or SolverOptions()
    ic.check(len(lam))
    start = FixedPointState.start(ic)
    tau, rho_hat, residual, iterations = damped_iteration(
        start.tau,
        start.rho_hat,
        _SigmaMap(lam, params, chan, options.rho_hat_mode),
        options,
        f"fixed point from the {ic.label} initial condition",
    )
    final = sigma_step(replace(start, tau=tau), lam, params, chan, options.rho_hat_mode)
    return replace(final, tau=tau, residual=residual, iterations=iterations)


def sigma_residuals(
    state: FixedPointState,
    lam: ArrivalVector,
    params: SystemParams,
    chan: ChannelSpec,
    mode: RhoHatMode = RhoHatMode.RHO_HAT_HAT,
) -> dict[str, float]:
    """Max-norm residuals of the attempt, collision and utilization equations."""
    view = channel_view(state.tau, params, chan, effective_costs(params, chan))
    rho = utilization(lam.rates, view.per_packet, params.payload_bits)
    rho_hat = embedded_utilization(rho, view.slots, mode)
    return {
        "attempt": float(np.max(np.abs(state.tau - rho_hat / view.wbar))),
        "collision": float(np.max(np.abs(state.p - view.p))),
        "utilization": float(np.max(np.abs(state.rho - rho))),
    }


def classify(
    lam: ArrivalVector,
    params: SystemParams,
    chan: ChannelSpec,
    options: SolverOptions | None = None,
    ics: Sequence[InitialCondition] | None = None,
) -> StabilityVerdict:
    options = options or SolverOptions()
    if ics is None:
        ics = default_initial_conditions(len(lam), options.ic_grid)
    solutions: list[FixedPointState] = []
    failed: list[str] = []
    for ic in ics:
        try:
            solutions.append(solve_sigma(lam, ic, params, chan, options))
        except NonConvergenceError as e:
            log.warn("initial condition {label} excluded: {error}", label=ic.label, error=str(e))
            failed.append(ic.label)
    if not solutions:
        msg = f"no initial condition converged for {lam}"
        raise NonConvergenceError(msg, float("inf"), options.max_iterations)
    stable = [s.stable for s in solutions]
    if all(stable):
        verdict = Verdict.STABLE_ALL_IC
    elif not any(stable):
        verdict = Verdict.UNSTABLE_ALL_IC
    else:
        verdict = Verdict.IC_DEPENDENT
    return StabilityVerdict(verdict=verdict, solutions=solutions, failed=failed)


@dataclass(frozen=True)
class SigmaTildeSolution:
    tau: FloatArray
    rho: FloatArray

    @property
    def stable(self) -> bool:
        return bool(np.all(self.rho < 1.0))


def common_slot_cost(chan: ChannelSpec) -> float:
    if chan.t_s != chan.t_c:
        log.info(
            "closed form assumes one slot cost; using T = T_s = {t_s} s instead of T_c = {t_c} s",
            t_s=chan.t_s,
            t_c=chan.t_c,
        )
    return chan.t_s


def solve_sigma_tilde(lam: ArrivalVector, params: SystemParams, t: float) -> SigmaTildeSolution:
    """Unique solution of the large-window linearized system, in closed form."""
    if not t > 0:
        msg = f"slot cost must be positive, got {t}"
        raise ParameterError(msg)
    w = params.window
    load = lam.rates * t / params.payload_bits
    gamma1 = load / (1.0 + load)
    gamma2 = (
        lam.rates * ((w - 1) * params.sigma + 2.0 * t) / (params.payload_bits * (w + 1))
    ) / (1.0 + load)
    coupling = float(gamma1.sum())
    if coupling >= 1.0:
        msg = f"closed form is infeasible: sum of coupling weights {coupling:.6g} >= 1"
        raise InfeasibleError(msg)
    tau = gamma1 * gamma2.sum() / (1.0 - coupling) + gamma2
    return SigmaTildeSolution(tau=tau, rho=tau * (w + 1) / 2.0)


def sigma_tilde_stable(lam: ArrivalVector, params: SystemParams, t: float) -> bool:
    """Feasible with every ρ_i < 1; zero-rate nodes and the origin count as stable."""
    try:
        return solve_sigma_tilde(lam, params, t).stable
    except InfeasibleError:
        return False


def lambda_tilde_contains(lam: ArrivalVector, params: SystemParams, t: float) -> bool:
    try:
        solution = solve_sigma_tilde(lam, params, t)
    except InfeasibleError:
        return False
    bound = 2.0 / (params.window + 1)
    return bool(np.all(solution.tau > 0) and np.all(solution.tau < bound))
