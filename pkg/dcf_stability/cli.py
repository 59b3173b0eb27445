import argparse
import json
import sys
from collections.abc import Callable, Mapping, Sequence
from pathlib import Path
from typing import Any

from twisted.logger import (
    FilteringLogObserver,
    LogLevel,
    LogLevelFilterPredicate,
    Logger,
    globalLogBeginner,
    textFileLogObserver,
)

from .aloha import frontier_shape, region_boundary
from .common import (
    ConfigError,
    DcfStabilityError,
    NonConvergenceError,
    dump_json,
    write_csv,
    write_json,
)
from .frontier import (
    AnalyticSolver,
    BoundaryTrace,
    Method,
    distinct_traces,
    trace_analytic,
    trace_empirical,
    trace_region,
)
from .multi_channel import equi_occupancy_gap, solve_sigma_g, solve_sigma_g_tilde
from .options import CliOptions, ExperimentConfig, RuntimeOptions, load_config
from .recipes import RECIPES, RecipeContext, run_recipe
from .simulator import classify_stability, simulate
from .single_channel import (
    FixedPointState,
    classify,
    lambda_tilde_contains,
    sigma_residuals,
    solve_sigma,
    solve_sigma_tilde,
)

log = Logger()

SOLUTION_HEADER = ["node", "tau", "p", "rho", "rho_hat", "wbar", "residual", "ic_label"]
MULTI_HEADER = [
    "node",
    "channel",
    "tau",
    "p",
    "wbar",
    "rho_hat",
    "rho",
    "q",
    "q_hat",
    "q_tilde",
    "residual",
    "ic_label",
]

Command = Callable[[ExperimentConfig, CliOptions], dict[str, Any]]


def _out_dir(config: ExperimentConfig, options: CliOptions) -> Path:
    return options.runtime.resolve_output_dir(config)


def _metadata(config: ExperimentConfig, command: str) -> dict[str, Any]:
    return {"command": command, "config": config.to_dict(), "seed": config.simulation.seed}


def _solution_rows(state: FixedPointState) -> list[list[Any]]:
    return [
        [
            i,
            state.tau[i],
            state.p[i],
            state.rho[i],
            state.rho_hat[i],
            state.wbar[i],
            state.residual,
            state.ic_label,
        ]
        for i in range(state.tau.shape[0])
    ]


def solve_command(config: ExperimentConfig, options: CliOptions) -> dict[str, Any]:
    lam = config.arrivals()
    params = config.params()
    chan = config.channel_specs()[0]
    solver = config.solver_options()
    states = []
    for ic in config.initial_conditions():
        state = solve_sigma(lam, ic, params, chan, solver)
        log.debug(
            "residuals from {label}: {residuals}",
            label=ic.label,
            residuals=sigma_residuals(state, lam, params, chan, solver.rho_hat_mode),
        )
        states.append(state)
    rows = [row for state in states for row in _solution_rows(state)]
    path = _out_dir(config, options) / "solve.csv"
    write_csv(path, SOLUTION_HEADER, rows, _metadata(config, "solve"))
    return {
        "output": str(path),
        "solutions": [
            {"ic_label": s.ic_label, "stable": s.stable, "rho": s.rho, "tau": s.tau}
            for s in states
        ],
    }


def classify_command(config: ExperimentConfig, options: CliOptions) -> dict[str, Any]:
    solver = config.solver_options()
    verdict = classify(
        config.arrivals(),
        config.params(),
        config.channel_specs()[0],
        solver,
        config.initial_conditions(),
    )
    distinct = verdict.distinct_solutions(solver.distinct_threshold)
    out = _out_dir(config, options)
    rows = [row for state in verdict.solutions for row in _solution_rows(state)]
    write_csv(out / "classify.csv", SOLUTION_HEADER, rows, _metadata(config, "classify"))
    summary = {
        "verdict": verdict.verdict.value,
        "contains": verdict.contains,
        "distinct_solutions": len(distinct),
        "failed_initial_conditions": verdict.failed,
    }
    write_json(out / "classify.json", summary)
    return summary


def _analytic_solver(config: ExperimentConfig, method: Method) -> AnalyticSolver:
    return AnalyticSolver(
        method=method,
        params=config.params(),
        chans=config.channel_specs(),
        options=config.solver_options(),
        policy=config.occupancy_policy(),
        slot_cost=config.slot_cost(),
    )


def _write_boundary(
    config: ExperimentConfig, options: CliOptions, name: str, traces: Sequence[BoundaryTrace]
) -> dict[str, Any]:
    path = _out_dir(config, options) / f"{name}.csv"
    rows = [row for trace in traces for row in trace.rows()]
    write_csv(path, traces[0].header(), rows, _metadata(config, name))
    return {
        "output": str(path),
        "traces": [
            {
                "ic_label": t.ic_label,
                "method": t.method.value,
                "boundary": t.coordinates()[1],
                "flagged": t.flagged,
            }
            for t in traces
        ],
    }


def _fixed_axis(config: ExperimentConfig) -> int | None:
    return config.vary_axis() if len(config.nodes) >= 2 else None


def _empirical_boundary(config: ExperimentConfig, options: CliOptions) -> BoundaryTrace:
    s = config.sweep
    return trace_empirical(
        config.fixed_vectors(),
        s.sweep_axis,
        s.step,
        config.sim_config(),
        config.simulation.replications,
        fixed_axis=_fixed_axis(config),
        start=s.start,
        max_steps=s.max_steps,
        workers=options.runtime.workers,
    )


def boundary_command(config: ExperimentConfig, options: CliOptions) -> dict[str, Any]:
    method = config.method()
    if method is Method.EMPIRICAL_SIM:
        return _write_boundary(config, options, "boundary", [_empirical_boundary(config, options)])
    s = config.sweep
    traces = trace_analytic(
        config.fixed_vectors(),
        s.sweep_axis,
        s.step,
        _analytic_solver(config, method),
        config.initial_conditions(),
        fixed_axis=_fixed_axis(config),
        start=s.start,
        max_steps=s.max_steps,
        refinements=s.refinements,
        workers=options.runtime.workers,
    )
    resolution = s.step / 2**s.refinements
    kept = distinct_traces(traces, resolution)
    return _write_boundary(config, options, "boundary", list(kept.values()))


def region_tilde_command(config: ExperimentConfig, options: CliOptions) -> dict[str, Any]:
    lam = config.arrivals()
    params = config.params()
    t = config.slot_cost()
    summary: dict[str, Any] = {
        "slot_cost": t,
        "in_lambda_tilde": lambda_tilde_contains(lam, params, t),
    }
    try:
        solution = solve_sigma_tilde(lam, params, t)
    except DcfStabilityError as e:
        summary.update(feasible=False, reason=str(e))
    else:
        summary.update(feasible=True, stable=solution.stable, tau=solution.tau, rho=solution.rho)
    if len(lam) >= 2:
        s = config.sweep
        traces = trace_region(
            lam.rates,
            s.sweep_axis,
            config.vary_axis(),
            s.points,
            s.step,
            _analytic_solver(config, Method.ANALYTIC_SIGMA_TILDE),
            refinements=s.refinements,
            workers=options.runtime.workers,
        )
        summary["region"] = _write_boundary(config, options, "region_tilde", list(traces.values()))
    write_json(_out_dir(config, options) / "region_tilde.json", summary)
    return summary


def multichannel_command(config: ExperimentConfig, options: CliOptions) -> dict[str, Any]:
    lam = config.arrivals()
    params = config.params()
    chans = config.channel_specs()
    policy = config.occupancy_policy()
    rows = []
    solutions = []
    for ic in config.initial_conditions():
        state = solve_sigma_g(lam, policy, params, chans, ic, config.solver_options())
        solutions.append({"ic_label": ic.label, "stable": state.stable, "rho": state.rho})
        for i, occupancy in enumerate(state.occupancy):
            rows.extend(
                [
                    i,
                    k,
                    state.tau[i, k],
                    state.p[i, k],
                    state.wbar[i, k],
                    state.rho_hat[i, k],
                    state.rho[i],
                    occupancy.q[k],
                    occupancy.q_hat[k],
                    occupancy.q_tilde[k],
                    state.residual,
                    ic.label,
                ]
                for k in range(policy.n_channels)
            )
    out = _out_dir(config, options)
    write_csv(out / "multichannel.csv", MULTI_HEADER, rows, _metadata(config, "multichannel"))
    t = config.slot_cost()
    summary: dict[str, Any] = {"solutions": solutions, "occupancy": policy.q}
    try:
        tilde = solve_sigma_g_tilde(lam, policy, params, t)
        summary["approximation"] = {"feasible": True, "stable": tilde.stable, "rho": tilde.rho}
    except DcfStabilityError as e:
        summary["approximation"] = {"feasible": False, "reason": str(e)}
    gap = equi_occupancy_gap(lam, policy.q, params, t)
    summary["equi_occupancy_gap"] = {
        "gap": gap.gap,
        "spread": gap.spread,
        "uniform_spread": gap.uniform_spread,
        "rho_difference": gap.rho_difference,
    }
    write_json(out / "multichannel.json", summary)
    return summary


def aloha_command(config: ExperimentConfig, options: CliOptions) -> dict[str, Any]:
    a = config.aloha
    out = _out_dir(config, options)
    summary = {}
    for wbar in a.wbar:
        frontier = region_boundary(a.n_users, wbar, a.grid)
        n = frontier.rates.shape[1]
        header = [f"tau_{i + 1}" for i in range(n)] + [f"rate_{i + 1}" for i in range(n)]
        rows = [[*t, *r] for t, r in zip(frontier.tau, frontier.rates, strict=True)]
        name = f"aloha_wbar{wbar:g}"
        write_csv(out / f"{name}.csv", header, rows, _metadata(config, "aloha"))
        summary[name] = {
            "points": len(frontier),
            "shape": frontier_shape(frontier).value if n == 2 else None,
        }
    return summary


def simulate_command(config: ExperimentConfig, options: CliOptions) -> dict[str, Any]:
    sim = config.sim_config()
    report = simulate(sim)
    verdict = classify_stability(report, sim)
    out = _out_dir(config, options)
    metadata = {**_metadata(config, "simulate"), "generator": report.generator}
    write_json(out / "simulate.json", {**report.to_dict(), "unstable": verdict.unstable})
    if report.sample_times.size:
        channels = [f"channel_{k + 1}" for k in range(report.n_channels)]
        nodes = [f"node_{i + 1}" for i in range(report.n_nodes)]
        write_csv(out / "population.csv", ["time", *channels], report.population_rows(), metadata)
        write_csv(out / "throughput.csv", ["time", *nodes], report.throughput_rows(), metadata)
    return {
        "unstable": verdict.unstable,
        "throughput": report.throughput,
        "aggregate_throughput": report.aggregate_throughput,
        "backlog": report.backlog,
        "events": report.events,
    }


def sweep_sim_command(config: ExperimentConfig, options: CliOptions) -> dict[str, Any]:
    trace = _empirical_boundary(config, options)
    summary = _write_boundary(config, options, "sweep_sim", [trace])
    summary["spread"] = [p.spread for p in trace.points]
    return summary


def fig_command(config: ExperimentConfig, options: CliOptions) -> dict[str, Any]:
    assert options.recipe is not None
    ctx = RecipeContext(
        config=config,
        out_dir=_out_dir(config, options),
        workers=options.runtime.workers,
        empirical=options.empirical,
    )
    return run_recipe(options.recipe, ctx)


def _applied_defaults(raw: Any, echo: Any, prefix: str = "") -> list[str]:
    if not isinstance(echo, Mapping):
        return []
    raw = raw if isinstance(raw, Mapping) else {}
    applied = []
    for key, value in echo.items():
        path = f"{prefix}{key}"
        if key not in raw:
            applied.append(path)
        elif isinstance(value, list) and isinstance(raw[key], list):
            for i, (r, e) in enumerate(zip(raw[key], value, strict=False)):
                applied.extend(_applied_defaults(r, e, f"{path}[{i}]."))
        else:
            applied.extend(_applied_defaults(raw[key], value, f"{path}."))
    return applied


def validate(raw: Any) -> dict[str, Any]:
    """Resolve a raw document; schema errors are part of the report, never raised."""
    try:
        config = ExperimentConfig.from_dict(raw)
    except ConfigError as e:
        return {"valid": False, "errors": e.errors, "config": None, "defaults_applied": []}
    echo = config.to_dict()
    return {
        "valid": True,
        "errors": [],
        "config": echo,
        "defaults_applied": _applied_defaults(raw, echo),
    }


def _read_raw(path: Path | None) -> Any:
    if path is None:
        return {}
    try:
        return json.loads(path.read_text())
    except OSError as e:
        msg = f"cannot read config {path}: {e.strerror}"
        raise ConfigError([msg]) from e
    except json.JSONDecodeError as e:
        msg = f"{path}: invalid JSON at line {e.lineno}: {e.msg}"
        raise ConfigError([msg]) from e


def parse_args(argv: Sequence[str] | None = None) -> tuple[Command | None, CliOptions]:
    parser = argparse.ArgumentParser(
        description="Stability regions of single- and multi-channel 802.11 DCF WLANs"
    )
    parser.add_argument(
        "--config",
        type=Path,
        help="Path to a JSON experiment document; 802.11b defaults when omitted",
    )
    parser.add_argument(
        "--output-dir",
        type=Path,
        help="Directory for CSV/JSON artifacts (overrides DCF_STABILITY_OUTPUT_DIR)",
    )
    parser.add_argument(
        "--workers",
        type=int,
        help="Worker processes (overrides DCF_STABILITY_WORKERS)",
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="Log debug events",
    )
    subparser = parser.add_subparsers(
        dest="command",
        required=True,
        help="Command to run",
    )
    commands: dict[str, tuple[Command | None, str]] = {
        "solve": (solve_command, "Solve the single-channel fixed point from each initial condition"),
        "classify": (classify_command, "Classify λ as stable, unstable or IC-dependent"),
        "boundary": (boundary_command, "Trace the stability boundary along one axis"),
        "region-tilde": (region_tilde_command, "Closed-form large-window region"),
        "multichannel": (multichannel_command, "Solve the multi-channel system under an unbiased policy"),
        "aloha": (aloha_command, "Slotted-Aloha capacity frontiers"),
        "simulate": (simulate_command, "Run the discrete-event MAC simulator once"),
        "sweep-sim": (sweep_sim_command, "Empirical boundary from repeated simulation"),
        "validate": (None, "Echo the resolved configuration or its schema errors"),
    }
    for name, (command, help_text) in commands.items():
        command_parser = subparser.add_parser(name, help=help_text)
        command_parser.set_defaults(command=command)
    fig_parser = subparser.add_parser("fig", help="Reproduce a figure recipe")
    fig_parser.set_defaults(command=fig_command)
    fig_parser.add_argument("recipe", choices=sorted(RECIPES), help="Recipe to run")
    fig_parser.add_argument(
        "--empirical",
        action="store_true",
        help="Add simulated traces where the recipe supports them",
    )

    args = parser.parse_args(argv)
    runtime = RuntimeOptions(verbose=args.verbose)
    if args.workers is not None:
        runtime.workers = args.workers
    if args.output_dir is not None:
        runtime.output_dir = args.output_dir
    return args.command, CliOptions(
        config=args.config,
        runtime=runtime,
        recipe=getattr(args, "recipe", None),
        empirical=getattr(args, "empirical", False),
    )


def _error_document(e: Exception, details: list[Any]) -> str:
    return dump_json({"error": type(e).__name__, "message": str(e), "details": details})


def begin_logging(verbose: bool) -> None:
    level = LogLevel.debug if verbose else LogLevel.info
    predicate = LogLevelFilterPredicate(defaultLogLevel=level)
    observer = FilteringLogObserver(textFileLogObserver(sys.stderr), [predicate])
    globalLogBeginner.beginLoggingTo([observer], redirectStandardIO=False)


def run(argv: Sequence[str] | None = None, *, start_logging: bool = False) -> int:
    command, options = parse_args(argv)
    if start_logging:
        begin_logging(options.runtime.verbose)
    try:
        if command is None:
            print(dump_json(validate(_read_raw(options.config))), end="")
            return 0
        config = load_config(options.config)
        summary = command(config, options)
    except ConfigError as e:
        print(_error_document(e, e.errors), end="")
        return 2
    except NonConvergenceError as e:
        print(_error_document(e, [{"residual": e.residual, "iterations": e.iterations}]), end="")
        return 1
    except (DcfStabilityError, OSError) as e:
        print(_error_document(e, []), end="")
        return 1
    print(dump_json(summary), end="")
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:], start_logging=True))

