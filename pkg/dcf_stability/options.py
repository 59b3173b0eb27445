import json
import multiprocessing
import os
import types
import typing
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from .common import ConfigError, DcfStabilityError
from .core import (
    MICROSECOND,
    ArrivalVector,
    ChannelSpec,
    CollisionModel,
    SystemParams,
    derive_timing,
)
from .frontier import Method
from .multi_channel import UnbiasedPolicy
from .simulator import NodeSpec, PolicyKind, PolicySpec, SimConfig
from .single_channel import (
    InitialCondition,
    RhoHatMode,
    SolverOptions,
    common_slot_cost,
    default_initial_conditions,
)

S = TypeVar("S")

DEFAULT_BANDWIDTH = 11e6


@dataclass
class SystemSection:
    window: int = 32
    max_stage: int = 5
    sigma_us: float = 20.0
    difs_us: float = 50.0
    sifs_us: float = 10.0
    ack_us: float = 203.0
    header_us: float = 192.0
    prop_delay_us: float = 1.0
    payload_bits: float = 12000.0
    collision_model: str = CollisionModel.BIANCHI.value


@dataclass
class ChannelSection:
    bandwidth: float = DEFAULT_BANDWIDTH


@dataclass
class NodeSection:
    rate: float = 0.0
    policy: str = PolicyKind.STATIC.value
    switch_probs: list[float] = field(default_factory=list)
    # α_i = i/m instead of explicit switch_probs
    stage_ramp: bool = False
    assign_dist: list[float] = field(default_factory=list)
    initial_channel: int = 0


@dataclass
class SolverSection:
    damping: float = 0.5
    tolerance: float = 1e-10
    max_iterations: int = 100_000
    ic_grid: int = 0
    rho_hat_mode: str = RhoHatMode.RHO_HAT_HAT.value
    distinct_threshold: float = 1e-4
    initial_conditions: list[str] = field(default_factory=lambda: ["zero", "near_one"])


@dataclass
class PolicySection:
    # None means equi-occupancy over the configured channels
    occupancy: list[float] | None = None
    slot_cost_us: float | None = None


@dataclass
class SimulationSection:
    t_f: float = 10.0
    seed: int = 1
    replications: int = 1
    alpha: float = 0.01
    sample_interval: float = 0.01


@dataclass
class SweepSection:
    method: str = Method.ANALYTIC_SIGMA.value
    sweep_axis: int = 0
    vary_axis: int | None = None
    points: int = 11
    step: float = 100_000.0
    start: float = 0.0
    refinements: int = 4
    max_steps: int = 1000
    fixed: list[list[float]] | None = None


@dataclass
class AlohaSection:
    n_users: int = 2
    wbar: list[float] = field(default_factory=lambda: [1.0, 2.0, 5.0, 10.0, 20.0])
    grid: int = 200


@dataclass
class OutputSection:
    directory: str | None = None


def _conforms(value: Any, tp: Any) -> bool:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        return any(_conforms(value, arg) for arg in typing.get_args(tp))
    if tp is type(None):
        return value is None
    if origin is list:
        (item,) = typing.get_args(tp)
        return isinstance(value, list) and all(_conforms(v, item) for v in value)
    if tp is bool:
        return isinstance(value, bool)
    if tp is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if tp is float:
        return isinstance(value, int | float) and not isinstance(value, bool)
    if tp is str:
        return isinstance(value, str)
    return False


def _members(tp: Any) -> tuple[Any, ...]:
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        return typing.get_args(tp)
    return (tp,)


def _normalized(value: Any, tp: Any) -> Any:
    # ints written for float fields become floats so the echo is a fixed point
    if value is None:
        return None
    members = _members(tp)
    if float in members:
        return float(value)
    if isinstance(value, list):
        for member in members:
            if typing.get_origin(member) is list:
                (item,) = typing.get_args(member)
                return [_normalized(v, item) for v in value]
    return value


def _section(cls: type[S], raw: Any, path: str, errors: list[str]) -> S:
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        errors.append(f"{path}: expected an object")
        return cls()
    known = {f.name: f for f in fields(cls)}  # type: ignore[arg-type]
    errors.extend(f"{path}.{key}: unknown key" for key in raw if key not in known)
    values = {}
    hints = typing.get_type_hints(cls)
    for name, value in raw.items():
        if name not in known:
            continue
        if not _conforms(value, hints[name]):
            errors.append(f"{path}.{name}: expected {hints[name]}, got {value!r}")
            continue
        values[name] = _normalized(value, hints[name])
    return cls(**values)


def _section_list(
    cls: type[S], raw: Any, path: str, errors: list[str], default: list[S]
) -> list[S]:
    if raw is None:
        return default
    if not isinstance(raw, list) or not raw:
        errors.append(f"{path}: expected a non-empty list")
        return default
    return [_section(cls, item, f"{path}[{i}]", errors) for i, item in enumerate(raw)]


@dataclass
class ExperimentConfig:
    """Fully resolved experiment document. Rates are bits/second, durations in `*_us` keys are microseconds."""

    system: SystemSection = field(default_factory=SystemSection)
    channels: list[ChannelSection] = field(default_factory=lambda: [ChannelSection()])
    nodes: list[NodeSection] = field(default_factory=lambda: [NodeSection(), NodeSection()])
    solver: SolverSection = field(default_factory=SolverSection)
    policy: PolicySection = field(default_factory=PolicySection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    aloha: AlohaSection = field(default_factory=AlohaSection)
    output: OutputSection = field(default_factory=OutputSection)

    @classmethod
    def from_dict(cls, raw: Any) -> "ExperimentConfig":
        errors: list[str] = []
        if raw is None:
            raw = {}
        if not isinstance(raw, Mapping):
            raise ConfigError(["document: expected an object"])
        known = {f.name for f in fields(cls)}
        errors.extend(f"{key}: unknown key" for key in raw if key not in known)
        config = cls(
            system=_section(SystemSection, raw.get("system"), "system", errors),
            channels=_section_list(
                ChannelSection, raw.get("channels"), "channels", errors, [ChannelSection()]
            ),
            nodes=_section_list(
                NodeSection, raw.get("nodes"), "nodes", errors, [NodeSection(), NodeSection()]
            ),
            solver=_section(SolverSection, raw.get("solver"), "solver", errors),
            policy=_section(PolicySection, raw.get("policy"), "policy", errors),
            simulation=_section(SimulationSection, raw.get("simulation"), "simulation", errors),
            sweep=_section(SweepSection, raw.get("sweep"), "sweep", errors),
            aloha=_section(AlohaSection, raw.get("aloha"), "aloha", errors),
            output=_section(OutputSection, raw.get("output"), "output", errors),
        )
        if not errors:
            errors.extend(config.check())
        if errors:
            raise ConfigError(errors)
        return config

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def check(self) -> list[str]:
        """Domain validation, reusing the constructors' own checks."""
        try:
            self.params()
        except (DcfStabilityError, ValueError) as e:
            return [f"system: {e}"]
        errors = []
        builders = [
            ("channels", self.channel_specs),
            ("nodes", self.arrivals),
            ("solver", self.solver_options),
            ("solver.initial_conditions", self.initial_conditions),
            ("policy", self.occupancy_policy),
            ("simulation", self.sim_config),
            ("sweep", self._check_sweep),
            ("aloha", self._check_aloha),
        ]
        for path, build in builders:
            try:
                build()
            except (DcfStabilityError, ValueError) as e:
                errors.append(f"{path}: {e}")
        return errors

    def params(self) -> SystemParams:
        s = self.system
        try:
            model = CollisionModel(s.collision_model)
        except ValueError as e:
            msg = f"collision_model must be one of {[m.value for m in CollisionModel]}"
            raise ConfigError([msg]) from e
        return SystemParams(
            window=s.window,
            max_stage=s.max_stage,
            sigma=s.sigma_us * MICROSECOND,
            difs=s.difs_us * MICROSECOND,
            sifs=s.sifs_us * MICROSECOND,
            ack_time=s.ack_us * MICROSECOND,
            header_time=s.header_us * MICROSECOND,
            prop_delay=s.prop_delay_us * MICROSECOND,
            payload_bits=s.payload_bits,
            collision_model=model,
        )

    def channel_specs(self) -> tuple[ChannelSpec, ...]:
        params = self.params()
        return tuple(derive_timing(params, c.bandwidth) for c in self.channels)

    def arrivals(self) -> ArrivalVector:
        return ArrivalVector([n.rate for n in self.nodes])

    def solver_options(self) -> SolverOptions:
        s = self.solver
        return SolverOptions(
            damping=s.damping,
            tolerance=s.tolerance,
            max_iterations=s.max_iterations,
            ic_grid=s.ic_grid,
            rho_hat_mode=RhoHatMode(s.rho_hat_mode),
            distinct_threshold=s.distinct_threshold,
        )

    def initial_conditions(self) -> list[InitialCondition]:
        n = len(self.nodes)
        available = {ic.label: ic for ic in default_initial_conditions(n, self.solver.ic_grid)}
        unknown = [label for label in self.solver.initial_conditions if label not in available]
        if unknown:
            msg = f"unknown initial conditions {unknown}, known: {sorted(available)}"
            raise ConfigError([msg])
        labels = list(self.solver.initial_conditions)
        labels += [label for label in available if label.startswith("grid_")]
        return [available[label] for label in labels]

    def occupancy_policy(self) -> UnbiasedPolicy:
        k = len(self.channels)
        if self.policy.occupancy is None:
            return UnbiasedPolicy.equi_occupancy(k)
        policy = UnbiasedPolicy.of(self.policy.occupancy)
        if policy.n_channels != k:
            msg = f"occupancy has {policy.n_channels} entries for {k} channels"
            raise ConfigError([msg])
        return policy

    def slot_cost(self) -> float:
        if self.policy.slot_cost_us is not None:
            return self.policy.slot_cost_us * MICROSECOND
        return common_slot_cost(self.channel_specs()[0])

    def node_specs(self) -> tuple[NodeSpec, ...]:
        params = self.params()
        nodes = []
        for n in self.nodes:
            kind = PolicyKind(n.policy)
            if n.stage_ramp:
                policy = PolicySpec.stage_ramp(kind, params.max_stage)
            else:
                policy = PolicySpec(
                    kind=kind,
                    switch_probs=tuple(n.switch_probs),
                    assign_dist=tuple(n.assign_dist),
                )
            nodes.append(NodeSpec(rate=n.rate, policy=policy, initial_channel=n.initial_channel))
        return tuple(nodes)

    def sim_config(self) -> SimConfig:
        s = self.simulation
        if s.replications < 1:
            msg = f"replications must be >= 1, got {s.replications}"
            raise ConfigError([msg])
        return SimConfig(
            params=self.params(),
            channels=self.channel_specs(),
            nodes=self.node_specs(),
            t_f=s.t_f,
            seed=s.seed,
            alpha_threshold=s.alpha,
            sample_interval=s.sample_interval,
        )

    def method(self) -> Method:
        return Method(self.sweep.method)

    def vary_axis(self) -> int:
        if self.sweep.vary_axis is not None:
            return self.sweep.vary_axis
        return 1 if self.sweep.sweep_axis == 0 else 0

    def fixed_vectors(self) -> list[np.ndarray]:
        """Explicit fixed arrival vectors, or the configured node rates as the single base."""
        if self.sweep.fixed is None:
            return [self.arrivals().rates.copy()]
        return [np.array(v, dtype=np.float64) for v in self.sweep.fixed]

    def _check_sweep(self) -> None:
        s = self.sweep
        n = len(self.nodes)
        problems = []
        self.method()
        if not 0 <= s.sweep_axis < n:
            problems.append(f"sweep_axis {s.sweep_axis} out of range for {n} nodes")
        if s.vary_axis is not None and not 0 <= s.vary_axis < n:
            problems.append(f"vary_axis {s.vary_axis} out of range for {n} nodes")
        if not s.step > 0:
            problems.append(f"step must be positive, got {s.step}")
        if s.start < 0:
            problems.append(f"start must be >= 0, got {s.start}")
        if s.points < 2:
            problems.append(f"points must be >= 2, got {s.points}")
        if s.refinements < 0 or s.max_steps < 1:
            problems.append("refinements must be >= 0 and max_steps >= 1")
        for i, vector in enumerate(s.fixed or []):
            if len(vector) != n:
                problems.append(f"fixed[{i}] has {len(vector)} rates for {n} nodes")
            elif any(v < 0 for v in vector):
                problems.append(f"fixed[{i}] has a negative rate")
        if problems:
            raise ConfigError(problems)

    def _check_aloha(self) -> None:
        a = self.aloha
        problems = []
        if a.n_users < 1:
            problems.append(f"n_users must be >= 1, got {a.n_users}")
        if not a.wbar or any(w < 1 for w in a.wbar):
            problems.append(f"wbar values must be >= 1, got {a.wbar}")
        if a.grid < 2:
            problems.append(f"grid must be >= 2, got {a.grid}")
        if problems:
            raise ConfigError(problems)


def load_config(path: Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig.from_dict({})
    try:
        raw = json.loads(path.read_text())
    except OSError as e:
        msg = f"cannot read config {path}: {e.strerror}"
        raise ConfigError([msg]) from e
    except json.JSONDecodeError as e:
        msg = f"{path}: invalid JSON at line {e.lineno}: {e.msg}"
        raise ConfigError([msg]) from e
    return ExperimentConfig.from_dict(raw)


@dataclass
class RuntimeOptions:
    workers: int = field(
        default_factory=lambda: int(
            os.environ.get("DCF_STABILITY_WORKERS", str(multiprocessing.cpu_count()))
        )
    )
    output_dir: Path | None = field(
        default_factory=lambda: (
            Path(os.environ["DCF_STABILITY_OUTPUT_DIR"])
            if "DCF_STABILITY_OUTPUT_DIR" in os.environ
            else None
        )
    )
    verbose: bool = False

    def resolve_output_dir(self, config: ExperimentConfig) -> Path:
        if self.output_dir is not None:
            return self.output_dir
        if config.output.directory is not None:
            return Path(config.output.directory)
        return Path("results")


@dataclass
class CliOptions:
    config: Path | None = None
    runtime: RuntimeOptions = field(default_factory=RuntimeOptions)
    recipe: str | None = None
    empirical: bool = False
