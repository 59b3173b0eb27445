from collections.abc import Callable
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
from twisted.logger import Logger

from .aloha import frontier_nested, frontier_shape, region_boundary
from .common import ParameterError, run_parallel, write_csv, write_json
from .core import CollisionModel, SystemParams, derive_timing
from .frontier import (
    CLOSED_FORM,
    COMPONENT_HEADER,
    AnalyticSolver,
    BoundaryTrace,
    Method,
    SolutionComponent,
    shape_classify,
    sweep_solution_component,
    trace_analytic,
    trace_area,
    trace_dominates,
    trace_empirical,
    trace_region,
)
from .multi_channel import UnbiasedPolicy
from .options import DEFAULT_BANDWIDTH, ExperimentConfig
from .simulator import (
    NodeSpec,
    PolicyKind,
    PolicySpec,
    SimConfig,
    SimReport,
    mean_population,
    simulate,
)
from .single_channel import InitialCondition, SolverOptions

log = Logger()

MBPS = 1e6
FIG1_WINDOWS = (2, 4, 8, 16)
FIG2_WINDOWS = (128, 32, 8, 4)
FIG5_WINDOWS = (4, 8, 32)
FIG6_WINDOWS = (32, 128)
FIG6_OCCUPANCIES = ((0.5, 0.5), (0.6, 0.4), (0.7, 0.3), (0.9, 0.1))
FIG7_BANDWIDTHS = (11 * MBPS / 3, 22 * MBPS / 3)
FIG7_ASSIGNMENTS = ((0.5, 0.5), (1 / 3, 2 / 3), (0.2, 0.8))
FIG7_BACKGROUND = 10
FIG8_NODES = 60
FIG8_RATE = 0.1 * MBPS
FIG8_BANDWIDTHS = (1 * MBPS, 10 * MBPS)
FIG8_DURATION = 180.0
# two solution curves count as different when they are this far apart
COMPONENT_AGREEMENT = 1e-3


@dataclass(frozen=True)
class RecipeContext:
    config: ExperimentConfig
    out_dir: Path
    workers: int
    empirical: bool = False

    def metadata(self, recipe: str, **extra: Any) -> dict[str, Any]:
        return {
            "recipe": recipe,
            "config": self.config.to_dict(),
            "seed": self.config.simulation.seed,
            **extra,
        }


def _params(window: int, max_stage: int, model: CollisionModel = CollisionModel.BIANCHI) -> SystemParams:
    return SystemParams(window=window, max_stage=max_stage, collision_model=model)


def _write_traces(
    ctx: RecipeContext, name: str, traces: list[BoundaryTrace], **extra: Any
) -> Path:
    path = ctx.out_dir / f"{name}.csv"
    rows = [row for trace in traces for row in trace.rows()]
    write_csv(path, traces[0].header(), rows, ctx.metadata(name, **extra))
    return path


def _trace_summary(trace: BoundaryTrace) -> dict[str, Any]:
    summary: dict[str, Any] = {
        "method": trace.method.value,
        "ic_label": trace.ic_label,
        "area": trace_area(trace),
        "flagged": trace.flagged,
    }
    try:
        summary["shape"] = shape_classify(trace).value
    except ParameterError:
        summary["shape"] = None
    return summary


def _two_node_region(
    ctx: RecipeContext, solver: AnalyticSolver, ics: list[InitialCondition] | None = None
) -> dict[str, BoundaryTrace]:
    sweep = ctx.config.sweep
    return trace_region(
        np.zeros(2),
        0,
        1,
        sweep.points,
        sweep.step,
        solver,
        ics,
        refinements=sweep.refinements,
        workers=ctx.workers,
    )


@dataclass(frozen=True)
class _ComponentJob:
    window: int
    ic: InitialCondition
    lambda2: float
    sweep: tuple[float, ...]
    options: SolverOptions


def _component(job: _ComponentJob) -> SolutionComponent:
    params = _params(job.window, 0)
    chan = derive_timing(params, DEFAULT_BANDWIDTH)
    return sweep_solution_component(job.lambda2, job.sweep, job.ic, params, chan, job.options)


def fig1(ctx: RecipeContext) -> dict[str, Any]:
    """Solution components of ρ_1 over λ_1 for the two extremal initial conditions."""
    sweep = tuple(np.round(np.arange(0.0, 4.5 * MBPS + 1.0, 0.1 * MBPS), 6))
    ics = [InitialCondition.zero(2), InitialCondition.near_one(2)]
    jobs = [
        _ComponentJob(w, ic, 1 * MBPS, sweep, ctx.config.solver_options())
        for w in FIG1_WINDOWS
        for ic in ics
    ]
    components = run_parallel(_component, jobs, ctx.workers)
    summary = {}
    for w_index, window in enumerate(FIG1_WINDOWS):
        pair = components[2 * w_index : 2 * w_index + 2]
        rows = [row for c in pair for row in c.rows()]
        write_csv(
            ctx.out_dir / f"fig1_w{window}.csv",
            COMPONENT_HEADER,
            rows,
            ctx.metadata("fig1", window=window, max_stage=0, lambda_2=1 * MBPS),
        )
        gap = np.abs(pair[0].rho_curve - pair[1].rho_curve)
        summary[f"w{window}"] = {
            "max_ic_gap": float(np.nanmax(gap)),
            "ic_dependent": bool(np.nanmax(gap) > COMPONENT_AGREEMENT),
            "jumps": {c.ic_label: int(np.count_nonzero(c.jumps)) for c in pair},
            "flagged": {c.ic_label: int(np.count_nonzero(c.flagged)) for c in pair},
        }
    return summary


def fig2(ctx: RecipeContext) -> dict[str, Any]:
    """Two-node analytic boundaries across windows, optionally against simulation at W = 32."""
    summary: dict[str, Any] = {}
    analytic_w32: BoundaryTrace | None = None
    for window in FIG2_WINDOWS:
        params = _params(window, 5)
        chans = (derive_timing(params, DEFAULT_BANDWIDTH),)
        solver = AnalyticSolver(
            Method.ANALYTIC_SIGMA, params, chans, ctx.config.solver_options()
        )
        traces = _two_node_region(ctx, solver)
        if window >= 64:
            tilde = AnalyticSolver(Method.ANALYTIC_SIGMA_TILDE, params, chans)
            traces["tilde"] = _two_node_region(ctx, tilde)[CLOSED_FORM]
        _write_traces(ctx, f"fig2_w{window}", list(traces.values()), window=window)
        summary[f"w{window}"] = {label: _trace_summary(t) for label, t in traces.items()}
        if window == 32:
            analytic_w32 = traces["zero"]
    if ctx.empirical and analytic_w32 is not None:
        empirical = _empirical_like(ctx, analytic_w32)
        _write_traces(
            ctx,
            "fig2_w32_empirical",
            [empirical],
            replications=ctx.config.simulation.replications,
        )
        x_a, y_a = analytic_w32.coordinates()
        _, y_e = empirical.coordinates()
        summary["w32_empirical"] = {
            **_trace_summary(empirical),
            "max_abs_deviation": float(np.max(np.abs(y_a - y_e))),
            "fixed_values": x_a.tolist(),
        }
    return summary


def _empirical_like(ctx: RecipeContext, analytic: BoundaryTrace) -> BoundaryTrace:
    s = ctx.config.simulation
    params = _params(32, 5)
    template = SimConfig(
        params=params,
        channels=(derive_timing(params, DEFAULT_BANDWIDTH),),
        nodes=(NodeSpec(0.0), NodeSpec(0.0)),
        t_f=s.t_f,
        seed=s.seed,
        alpha_threshold=s.alpha,
        sample_interval=0.0,
    )
    return trace_empirical(
        [p.fixed for p in analytic.points],
        analytic.sweep_axis,
        ctx.config.sweep.step,
        template,
        s.replications,
        fixed_axis=analytic.fixed_axis,
        workers=ctx.workers,
    )


def fig3(ctx: RecipeContext) -> dict[str, Any]:
    """Both initial-condition boundaries at W = 2, m = 0 with and without successive-attempt costs."""
    summary = {}
    for model in CollisionModel:
        params = _params(2, 0, model)
        chans = (derive_timing(params, DEFAULT_BANDWIDTH),)
        solver = AnalyticSolver(
            Method.ANALYTIC_SIGMA, params, chans, ctx.config.solver_options()
        )
        traces = _two_node_region(
            ctx, solver, [InitialCondition.zero(2), InitialCondition.near_one(2)]
        )
        _write_traces(ctx, f"fig3_{model.value}", list(traces.values()), collision_model=model.value)
        summary[model.value] = {
            **{label: _trace_summary(t) for label, t in traces.items()},
            "zero_dominates_near_one": trace_dominates(
                traces["zero"], traces["near_one"], slack=ctx.config.sweep.step / 16
            ),
        }
    return summary


def fig4(ctx: RecipeContext) -> dict[str, Any]:
    """Slotted-Aloha frontiers for several mean backoff lengths."""
    a = ctx.config.aloha
    frontiers = [region_boundary(a.n_users, w, a.grid) for w in a.wbar]
    summary: dict[str, Any] = {}
    for frontier in frontiers:
        n = frontier.rates.shape[1]
        header = [f"tau_{i + 1}" for i in range(n)] + [f"rate_{i + 1}" for i in range(n)]
        rows = [[*t, *r] for t, r in zip(frontier.tau, frontier.rates, strict=True)]
        name = f"fig4_wbar{frontier.wbar:g}"
        write_csv(ctx.out_dir / f"{name}.csv", header, rows, ctx.metadata("fig4", wbar=frontier.wbar))
        shape = frontier_shape(frontier).value if n == 2 else None
        summary[name] = {"wbar": frontier.wbar, "points": len(frontier), "shape": shape}
    # a longer backoff caps every τ lower, so its region sits inside the shorter one's
    ordered = sorted(frontiers, key=lambda f: f.wbar)
    summary["nested"] = all(
        frontier_nested(longer, shorter, slack=2.0 / a.grid)
        for shorter, longer in zip(ordered, ordered[1:], strict=False)
    )
    return summary


def fig5(ctx: RecipeContext) -> dict[str, Any]:
    """Two-node boundaries of the bi-channel system under equi-occupancy."""
    summary = {}
    policy = UnbiasedPolicy.equi_occupancy(2)
    for window in FIG5_WINDOWS:
        params = _params(window, 5)
        chans = (derive_timing(params, DEFAULT_BANDWIDTH),) * 2
        solver = AnalyticSolver(
            Method.ANALYTIC_SIGMA_G, params, chans, ctx.config.solver_options(), policy=policy
        )
        traces = _two_node_region(ctx, solver)
        _write_traces(ctx, f"fig5_w{window}", list(traces.values()), window=window)
        summary[f"w{window}"] = {label: _trace_summary(t) for label, t in traces.items()}
    return summary


def fig6(ctx: RecipeContext) -> dict[str, Any]:
    """Large-window boundaries for unbiased occupancies; the uniform one should contain the rest."""
    summary: dict[str, Any] = {}
    for window in FIG6_WINDOWS:
        params = _params(window, 5)
        chans = (derive_timing(params, DEFAULT_BANDWIDTH),) * 2
        solvers = {
            f"q{q[0]:g}": AnalyticSolver(
                Method.ANALYTIC_SIGMA_G_TILDE, params, chans, policy=UnbiasedPolicy.of(q)
            )
            for q in FIG6_OCCUPANCIES
        }
        uniform = _two_node_region(ctx, solvers["q0.5"])[CLOSED_FORM]
        # every occupancy is traced at the uniform trace's λ_2 values
        fixed = [p.fixed for p in uniform.points]
        traces = {
            label: trace_analytic(
                fixed,
                0,
                ctx.config.sweep.step,
                solver,
                fixed_axis=1,
                refinements=ctx.config.sweep.refinements,
                workers=ctx.workers,
            )[CLOSED_FORM]
            for label, solver in solvers.items()
        }
        _write_traces(
            ctx,
            f"fig6_w{window}",
            [replace(t, ic_label=label) for label, t in traces.items()],
            window=window,
            occupancies=[list(q) for q in FIG6_OCCUPANCIES],
        )
        summary[f"w{window}"] = {
            "traces": {label: _trace_summary(t) for label, t in traces.items()},
            "uniform_contains_all": all(
                trace_dominates(traces["q0.5"], t) for t in traces.values()
            ),
        }
    return summary


def _fig7_template(ctx: RecipeContext, policy: PolicySpec) -> SimConfig:
    s = ctx.config.simulation
    params = _params(32, 5)
    channels = tuple(derive_timing(params, b) for b in FIG7_BANDWIDTHS)
    inspected = (NodeSpec(0.0, policy, 0), NodeSpec(0.0, policy, 1))
    background = tuple(
        NodeSpec(0.5 * MBPS, policy, i % 2) for i in range(FIG7_BACKGROUND)
    )
    return SimConfig(
        params=params,
        channels=channels,
        nodes=inspected + background,
        t_f=s.t_f,
        seed=s.seed,
        alpha_threshold=s.alpha,
        sample_interval=0.0,
    )


def _empirical_region(ctx: RecipeContext, template: SimConfig) -> BoundaryTrace:
    s = ctx.config.simulation
    step = ctx.config.sweep.step
    origin = template.rates
    intercept = trace_empirical(
        [origin], 1, step, template, s.replications, workers=ctx.workers
    ).points[0].boundary
    fixed = []
    for value in np.linspace(0.0, intercept, ctx.config.sweep.points):
        row = origin.copy()
        row[1] = value
        fixed.append(row)
    return trace_empirical(
        fixed, 0, step, template, s.replications, fixed_axis=1, workers=ctx.workers
    )


def fig7(ctx: RecipeContext) -> dict[str, Any]:
    """Simulated projection onto two inspected nodes over a loaded background, asymmetric channels."""
    max_stage = 5
    policies = {
        f"assign_{a[0]:.3g}": PolicySpec(kind=PolicyKind.PACKET_ASSIGN, assign_dist=a)
        for a in FIG7_ASSIGNMENTS
    }
    policies["sac_ramp"] = PolicySpec.stage_ramp(PolicyKind.SAC, max_stage)
    traces = {}
    for label, policy in policies.items():
        trace = _empirical_region(ctx, _fig7_template(ctx, policy))
        traces[label] = replace(trace, ic_label=label)
        log.info("fig7 policy {label} traced", label=label)
    _write_traces(
        ctx,
        "fig7",
        list(traces.values()),
        bandwidths=list(FIG7_BANDWIDTHS),
        background_rate=0.5 * MBPS,
        replications=ctx.config.simulation.replications,
    )
    return {label: _trace_summary(t) for label, t in traces.items()}


def _fig8_config(ctx: RecipeContext, policy: PolicySpec) -> SimConfig:
    params = _params(32, 5)
    return SimConfig(
        params=params,
        channels=tuple(derive_timing(params, b) for b in FIG8_BANDWIDTHS),
        nodes=tuple(NodeSpec(FIG8_RATE, policy, i % 2) for i in range(FIG8_NODES)),
        t_f=FIG8_DURATION,
        seed=ctx.config.simulation.seed,
        alpha_threshold=ctx.config.simulation.alpha,
        sample_interval=ctx.config.simulation.sample_interval or 0.01,
    )


def fig8(ctx: RecipeContext) -> dict[str, Any]:
    """Population in the slow channel under SAS and SAC, blind and stage-ramped switching."""
    max_stage = 5
    runs = {
        f"{kind.value}_{profile}": spec
        for kind in (PolicyKind.SAC, PolicyKind.SAS)
        for profile, spec in (
            ("half", PolicySpec.uniform(kind, 0.5, max_stage)),
            ("ramp", PolicySpec.stage_ramp(kind, max_stage)),
        )
    }
    configs = [_fig8_config(ctx, spec) for spec in runs.values()]
    reports: list[SimReport] = run_parallel(simulate, configs, ctx.workers)
    summary = {}
    for label, config, report in zip(runs, configs, reports, strict=True):
        hist = report.population_histogram[0]
        write_csv(
            ctx.out_dir / f"fig8_{label}.csv",
            ["nodes_in_slow_channel", "samples"],
            [[n, int(c)] for n, c in enumerate(hist)],
            ctx.metadata("fig8", policy=label, simulation=config.describe()),
        )
        summary[label] = {
            "mean_population_slow": mean_population(report, 0),
            "aggregate_throughput": report.aggregate_throughput,
            "events": report.events,
        }
    return summary


RECIPES: dict[str, Callable[[RecipeContext], dict[str, Any]]] = {
    "fig1": fig1,
    "fig2": fig2,
    "fig3": fig3,
    "fig4": fig4,
    "fig5": fig5,
    "fig6": fig6,
    "fig7": fig7,
    "fig8": fig8,
}


def run_recipe(name: str, ctx: RecipeContext) -> dict[str, Any]:
    try:
        recipe = RECIPES[name]
    except KeyError as e:
        msg = f"unknown recipe {name!r}, known: {sorted(RECIPES)}"
        raise ParameterError(msg) from e
    ctx = replace(ctx, out_dir=ctx.out_dir / name)
    log.info("running recipe {name} into {out}", name=name, out=str(ctx.out_dir))
    summary = recipe(ctx)
    write_json(ctx.out_dir / "summary.json", summary)
    return summary

