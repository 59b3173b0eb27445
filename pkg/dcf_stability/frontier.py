import enum
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from twisted.logger import Logger

from .common import NonConvergenceError, ParameterError, run_parallel
from .core import ArrivalVector, ChannelSpec, FloatArray, SystemParams
from .multi_channel import UnbiasedPolicy, solve_sigma_g, unbiased_stable
from .shape import Shape, classify_profile, curvature_profile
from .simulator import SimConfig, classify_stability, simulate
from .single_channel import (
    InitialCondition,
    SolverOptions,
    common_slot_cost,
    default_initial_conditions,
    sigma_tilde_stable,
    solve_sigma,
)

log = Logger()

SHAPE_SAMPLES = 5
NEAR_LINEAR_BAND = 0.08
JUMP_THRESHOLD = 0.05
CLOSED_FORM = "closed_form"
COMPONENT_HEADER = ["lambda_1", "rho_1", "ic_label", "jump_flag", "flagged"]


class Method(enum.Enum):
    ANALYTIC_SIGMA = "analytic_sigma"
    ANALYTIC_SIGMA_TILDE = "analytic_sigma_tilde"
    ANALYTIC_SIGMA_G = "analytic_sigma_g"
    ANALYTIC_SIGMA_G_TILDE = "analytic_sigma_g_tilde"
    EMPIRICAL_SIM = "empirical_sim"


@dataclass(frozen=True)
class BoundaryPoint:
    # arrival vector with the swept entry zeroed
    fixed: tuple[float, ...]
    boundary: float
    flagged: bool = False
    spread: float = 0.0
    samples: tuple[float, ...] = ()


@dataclass(frozen=True)
class BoundaryTrace:
    sweep_axis: int
    fixed_axis: int | None
    method: Method
    ic_label: str | None
    points: tuple[BoundaryPoint, ...]

    def coordinates(self) -> tuple[FloatArray, FloatArray]:
        if self.fixed_axis is None:
            x = np.arange(len(self.points), dtype=np.float64)
        else:
            x = np.array([p.fixed[self.fixed_axis] for p in self.points])
        return x, np.array([p.boundary for p in self.points])

    @property
    def flagged(self) -> bool:
        return any(p.flagged for p in self.points)

    def header(self) -> list[str]:
        n = len(self.points[0].fixed) if self.points else 0
        return [
            *(f"lambda_{i + 1}" for i in range(n)),
            "boundary",
            "method",
            "ic_label",
            "flagged",
            "spread",
        ]

    def rows(self) -> list[list[Any]]:
        return [
            [*p.fixed, p.boundary, self.method.value, self.ic_label or "", p.flagged, p.spread]
            for p in self.points
        ]


@dataclass(frozen=True)
class SolutionComponent:
    lambda_sweep: FloatArray
    rho_curve: FloatArray
    jumps: np.ndarray
    flagged: np.ndarray
    ic_label: str

    @property
    def has_jump(self) -> bool:
        return bool(np.any(self.jumps))

    def rows(self) -> list[list[Any]]:
        return [
            [lam, rho, self.ic_label, bool(jump), bool(bad)]
            for lam, rho, jump, bad in zip(
                self.lambda_sweep, self.rho_curve, self.jumps, self.flagged, strict=True
            )
        ]


@dataclass(frozen=True)
class AnalyticSolver:
    """Stability oracle backed by one of the analytic systems."""

    method: Method
    params: SystemParams
    chans: tuple[ChannelSpec, ...]
    options: SolverOptions = field(default_factory=SolverOptions)
    policy: UnbiasedPolicy | None = None
    slot_cost: float | None = None

    def __post_init__(self) -> None:
        if self.method is Method.EMPIRICAL_SIM:
            msg = "the empirical method is traced with trace_empirical"
            raise ParameterError(msg)
        if not self.chans:
            msg = "an analytic solver needs at least one channel"
            raise ParameterError(msg)
        if self.method in (Method.ANALYTIC_SIGMA_G, Method.ANALYTIC_SIGMA_G_TILDE):
            if self.policy is None:
                msg = f"{self.method.value} needs an occupancy policy"
                raise ParameterError(msg)
            if self.method is Method.ANALYTIC_SIGMA_G and self.policy.n_channels != len(self.chans):
                msg = "occupancy policy and channel list differ in length"
                raise ParameterError(msg)

    @property
    def closed_form(self) -> bool:
        return self.method in (Method.ANALYTIC_SIGMA_TILDE, Method.ANALYTIC_SIGMA_G_TILDE)

    def families(
        self, n_nodes: int, ic_set: Sequence[InitialCondition] | None
    ) -> list[tuple[str, InitialCondition | None]]:
        if self.closed_form:
            return [(CLOSED_FORM, None)]
        ics = list(ic_set) if ic_set is not None else default_initial_conditions(n_nodes)
        return [(ic.label, ic) for ic in ics]

    def _cost(self) -> float:
        return self.slot_cost if self.slot_cost is not None else common_slot_cost(self.chans[0])

    def stable(self, rates: FloatArray, ic: InitialCondition | None) -> bool:
        lam = ArrivalVector(rates)
        if self.method is Method.ANALYTIC_SIGMA_TILDE:
            return sigma_tilde_stable(lam, self.params, self._cost())
        if self.method is Method.ANALYTIC_SIGMA_G_TILDE:
            assert self.policy is not None
            return unbiased_stable(lam, self.policy, self.params, self._cost())
        if ic is None:
            ic = InitialCondition.zero(len(lam))
        if self.method is Method.ANALYTIC_SIGMA:
            return solve_sigma(lam, ic, self.params, self.chans[0], self.options).stable
        assert self.policy is not None
        return solve_sigma_g(lam, self.policy, self.params, self.chans, ic, self.options).stable


@dataclass(frozen=True)
class _Search:
    solver: AnalyticSolver
    ic: InitialCondition | None
    base: tuple[float, ...]
    sweep_axis: int
    step: float
    start: float
    max_steps: int
    refinements: int

    def check(self, value: float) -> tuple[bool, bool]:
        rates = np.array(self.base, dtype=np.float64)
        rates[self.sweep_axis] = value
        try:
            return self.solver.stable(rates, self.ic), False
        except NonConvergenceError:
            return False, True


def _boundary_search(job: _Search) -> BoundaryPoint:
    stable, flagged = job.check(job.start)
    if not stable:
        return BoundaryPoint(fixed=job.base, boundary=job.start, flagged=flagged)
    lo = job.start
    hi = None
    for _ in range(job.max_steps):
        candidate = lo + job.step
        stable, bad = job.check(candidate)
        flagged |= bad
        if not stable:
            hi = candidate
            break
        lo = candidate
    if hi is None:
        # never left the region within max_steps
        return BoundaryPoint(fixed=job.base, boundary=lo, flagged=True)
    for _ in range(job.refinements):
        mid = 0.5 * (lo + hi)
        stable, bad = job.check(mid)
        flagged |= bad
        if stable:
            lo = mid
        else:
            hi = mid
    return BoundaryPoint(fixed=job.base, boundary=lo, flagged=flagged)


def _zeroed(base: ArrayLike, axis: int) -> tuple[float, ...]:
    values = np.array(base, dtype=np.float64).reshape(-1)
    if not 0 <= axis < values.size:
        msg = f"axis {axis} out of range for {values.size} nodes"
        raise ParameterError(msg)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        msg = f"fixed arrival rates must be finite and non-negative, got {values.tolist()}"
        raise ParameterError(msg)
    values[axis] = 0.0
    return tuple(float(v) for v in values)


def _sorted_points(points: list[BoundaryPoint], fixed_axis: int | None) -> tuple[BoundaryPoint, ...]:
    if fixed_axis is None:
        return tuple(points)
    return tuple(sorted(points, key=lambda p: p.fixed[fixed_axis]))


def trace_analytic(
    fixed: Sequence[ArrayLike],
    sweep_axis: int,
    step: float,
    solver: AnalyticSolver,
    ic_set: Sequence[InitialCondition] | None = None,
    *,
    fixed_axis: int | None = None,
    start: float = 0.0,
    max_steps: int = 1000,
    refinements: int = 4,
    workers: int = 1,
) -> dict[str, BoundaryTrace]:
    """Largest stable swept rate for each fixed arrival vector, one trace per IC family.

    Steps from `start` by `step`, then bisects `refinements` times between the
    last stable and the first unstable value. Non-convergent evaluations count
    as unstable and flag the point.
    """
    if not step > 0:
        msg = f"step must be positive, got {step}"
        raise ParameterError(msg)
    bases = [_zeroed(b, sweep_axis) for b in fixed]
    if not bases:
        msg = "need at least one fixed arrival vector"
        raise ParameterError(msg)
    families = solver.families(len(bases[0]), ic_set)
    jobs = [
        _Search(solver, ic, base, sweep_axis, step, start, max_steps, refinements)
        for _, ic in families
        for base in bases
    ]
    results = run_parallel(_boundary_search, jobs, workers)
    traces = {}
    for f, (label, _) in enumerate(families):
        chunk = results[f * len(bases) : (f + 1) * len(bases)]
        traces[label] = BoundaryTrace(
            sweep_axis=sweep_axis,
            fixed_axis=fixed_axis,
            method=solver.method,
            ic_label=label,
            points=_sorted_points(chunk, fixed_axis),
        )
        log.info(
            "traced {count} boundary points with {method} ({label})",
            count=len(chunk),
            method=solver.method.value,
            label=label,
        )
    return traces


def trace_region(
    base: ArrayLike,
    sweep_axis: int,
    vary_axis: int,
    points: int,
    step: float,
    solver: AnalyticSolver,
    ic_set: Sequence[InitialCondition] | None = None,
    *,
    refinements: int = 4,
    workers: int = 1,
) -> dict[str, BoundaryTrace]:
    """Trace a two-axis projection: find the intercept on `vary_axis`, then
    sweep `sweep_axis` at `points` evenly spaced values up to that intercept."""
    if sweep_axis == vary_axis:
        msg = "sweep and vary axes must differ"
        raise ParameterError(msg)
    if points < 2:
        msg = f"need at least 2 trace points, got {points}"
        raise ParameterError(msg)
    origin = np.array(_zeroed(base, sweep_axis))
    intercepts = trace_analytic(
        [origin], vary_axis, step, solver, ic_set, refinements=refinements, workers=workers
    )
    traces = {}
    for family, ic in solver.families(origin.size, ic_set):
        intercept = intercepts[family].points[0].boundary
        fixed = []
        for value in np.linspace(0.0, intercept, points):
            row = origin.copy()
            row[vary_axis] = value
            fixed.append(row)
        family_ics = None if ic is None else [ic]
        traced = trace_analytic(
            fixed,
            sweep_axis,
            step,
            solver,
            family_ics,
            fixed_axis=vary_axis,
            refinements=refinements,
            workers=workers,
        )
        traces[family] = traced[family]
    return traces


@dataclass(frozen=True)
class _EmpiricalSearch:
    template: SimConfig
    base: tuple[float, ...]
    sweep_axis: int
    step: float
    start: float
    max_steps: int
    seed: int

    def stable(self, value: float) -> bool:
        rates = np.array(self.base, dtype=np.float64)
        rates[self.sweep_axis] = value
        config = self.template.with_rates(rates).with_seed(self.seed)
        return not classify_stability(simulate(config), config).unstable


def _empirical_search(job: _EmpiricalSearch) -> float:
    last_stable = job.start
    if not job.stable(job.start):
        return job.start
    for k in range(1, job.max_steps + 1):
        value = job.start + k * job.step
        if not job.stable(value):
            break
        last_stable = value
    return last_stable


def trace_empirical(
    fixed: Sequence[ArrayLike],
    sweep_axis: int,
    step: float,
    sim_template: SimConfig,
    replications: int,
    *,
    fixed_axis: int | None = None,
    start: float = 0.0,
    max_steps: int = 1000,
    workers: int = 1,
) -> BoundaryTrace:
    """Simulated boundary: the last stable step before the first unstable one,
    averaged over replications with seeds template.seed + r."""
    if replications < 1:
        msg = f"replications must be >= 1, got {replications}"
        raise ParameterError(msg)
    if not step > 0:
        msg = f"step must be positive, got {step}"
        raise ParameterError(msg)
    bases = [_zeroed(b, sweep_axis) for b in fixed]
    jobs = [
        _EmpiricalSearch(
            sim_template, base, sweep_axis, step, start, max_steps, sim_template.seed + r
        )
        for base in bases
        for r in range(replications)
    ]
    results = run_parallel(_empirical_search, jobs, workers)
    points = []
    for b, base in enumerate(bases):
        samples = results[b * replications : (b + 1) * replications]
        points.append(
            BoundaryPoint(
                fixed=base,
                boundary=float(np.mean(samples)),
                spread=float(np.std(samples)),
                samples=tuple(samples),
            )
        )
    log.info(
        "traced {count} empirical boundary points over {replications} replications",
        count=len(points),
        replications=replications,
    )
    return BoundaryTrace(
        sweep_axis=sweep_axis,
        fixed_axis=fixed_axis,
        method=Method.EMPIRICAL_SIM,
        ic_label=None,
        points=_sorted_points(points, fixed_axis),
    )


def shape_classify(trace: BoundaryTrace) -> Shape:
    if len(trace.points) < 5:
        msg = f"shape classification needs at least 5 points, got {len(trace.points)}"
        raise ParameterError(msg)
    x, y = trace.coordinates()
    profile = curvature_profile(x, y, SHAPE_SAMPLES)
    return classify_profile(profile, NEAR_LINEAR_BAND)


def trace_area(trace: BoundaryTrace) -> float:
    x, y = trace.coordinates()
    order = np.argsort(x, kind="stable")
    return float(np.trapezoid(y[order], x[order]))


def trace_dominates(a: BoundaryTrace, b: BoundaryTrace, slack: float = 0.0) -> bool:
    """Whether trace `a` lies on or above trace `b` wherever `b` is defined."""
    xa, ya = a.coordinates()
    xb, yb = b.coordinates()
    order = np.argsort(xa, kind="stable")
    inside = xb <= xa.max()
    above = np.interp(xb[inside], xa[order], ya[order]) >= yb[inside] - slack
    outside_ok = yb[~inside] <= slack
    return bool(np.all(above) and np.all(outside_ok))


def phase_jumps(rho: ArrayLike, threshold: float = JUMP_THRESHOLD) -> np.ndarray:
    """Mark points whose ρ differs by more than `threshold` from the previous solved point.

    Unsolved (NaN) points are skipped, so a transition hidden behind one is
    marked at the first solved point after it.
    """
    values = np.asarray(rho, dtype=np.float64).reshape(-1)
    jumps = np.zeros(values.size, dtype=bool)
    solved = np.flatnonzero(np.isfinite(values))
    jumps[solved[1:]] = np.abs(np.diff(values[solved])) > threshold
    return jumps


def sweep_solution_component(
    lambda2_fixed: float,
    lambda1_range: ArrayLike,
    ic: InitialCondition,
    params: SystemParams,
    chan: ChannelSpec,
    options: SolverOptions | None = None,
) -> SolutionComponent:
    """ρ_1 along a λ_1 sweep of a two-node system, solved from one initial condition."""
    sweep = np.array(lambda1_range, dtype=np.float64).reshape(-1)
    if sweep.size == 0:
        msg = "the λ_1 range is empty"
        raise ParameterError(msg)
    rho = np.full(sweep.size, np.nan)
    flagged = np.zeros(sweep.size, dtype=bool)
    for k, value in enumerate(sweep):
        lam = ArrivalVector([value, lambda2_fixed])
        try:
            rho[k] = solve_sigma(lam, ic, params, chan, options).rho[0]
        except NonConvergenceError:
            flagged[k] = True
    return SolutionComponent(
        lambda_sweep=sweep, rho_curve=rho, jumps=phase_jumps(rho), flagged=flagged, ic_label=ic.label
    )


def distinct_traces(
    traces: dict[str, BoundaryTrace], tolerance: float
) -> dict[str, BoundaryTrace]:
    """Drop IC families whose boundary coincides with an earlier family's everywhere."""
    kept: dict[str, BoundaryTrace] = {}
    for label, trace in traces.items():
        _, y = trace.coordinates()
        if not any(
            len(other.points) == len(trace.points)
            and np.all(np.abs(other.coordinates()[1] - y) <= tolerance)
            for other in kept.values()
        ):
            kept[label] = trace
    return kept
