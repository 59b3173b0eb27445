from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from numpy.typing import ArrayLike

from dcf_stability.common import ParameterError
from dcf_stability.core import ChannelSpec, SystemParams

from .policy import PolicyKind, PolicySpec


@dataclass(frozen=True)
class NodeSpec:
    rate: float
    policy: PolicySpec = field(default_factory=PolicySpec)
    initial_channel: int = 0


@dataclass(frozen=True)
class SimConfig:
    params: SystemParams
    channels: tuple[ChannelSpec, ...]
    nodes: tuple[NodeSpec, ...]
    t_f: float = 10.0
    seed: int = 1
    alpha_threshold: float = 0.01
    # 0 disables population sampling
    sample_interval: float = 0.01

    def __post_init__(self) -> None:
        if not self.t_f > 0:
            msg = f"simulated duration must be positive, got {self.t_f}"
            raise ParameterError(msg)
        if not 0 < self.alpha_threshold < 1:
            msg = f"instability threshold must lie in (0, 1), got {self.alpha_threshold}"
            raise ParameterError(msg)
        if self.sample_interval < 0:
            msg = f"sampling interval must be >= 0, got {self.sample_interval}"
            raise ParameterError(msg)
        if not self.channels:
            msg = "simulation needs at least one channel"
            raise ParameterError(msg)
        if not self.nodes:
            msg = "simulation needs at least one node"
            raise ParameterError(msg)
        k = len(self.channels)
        for i, node in enumerate(self.nodes):
            if not (np.isfinite(node.rate) and node.rate >= 0):
                msg = f"node {i}: arrival rate must be finite and >= 0, got {node.rate}"
                raise ParameterError(msg)
            if not 0 <= node.initial_channel < k:
                msg = f"node {i}: initial channel {node.initial_channel} out of range for {k} channels"
                raise ParameterError(msg)
            if node.policy.kind is PolicyKind.PACKET_ASSIGN and len(node.policy.assign_dist) != k:
                msg = f"node {i}: packet assignment has {len(node.policy.assign_dist)} entries for {k} channels"
                raise ParameterError(msg)
            if len(node.policy.switch_probs) > self.params.max_stage + 1:
                msg = f"node {i}: more switch probabilities than backoff stages"
                raise ParameterError(msg)

    @property
    def rates(self) -> np.ndarray:
        return np.array([n.rate for n in self.nodes], dtype=np.float64)

    def with_rates(self, rates: ArrayLike) -> "SimConfig":
        values = np.asarray(rates, dtype=np.float64).reshape(-1)
        if values.size != len(self.nodes):
            msg = f"expected {len(self.nodes)} rates, got {values.size}"
            raise ParameterError(msg)
        nodes = tuple(
            replace(node, rate=float(r)) for node, r in zip(self.nodes, values, strict=True)
        )
        return replace(self, nodes=nodes)

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=seed)

    def describe(self) -> dict[str, Any]:
        return {
            "t_f": self.t_f,
            "seed": self.seed,
            "alpha_threshold": self.alpha_threshold,
            "sample_interval": self.sample_interval,
            "channels": [
                {"bandwidth": c.bandwidth, "t_s": c.t_s, "t_c": c.t_c} for c in self.channels
            ],
            "nodes": [
                {
                    "rate": n.rate,
                    "policy": n.policy.kind.value,
                    "switch_probs": list(n.policy.switch_probs),
                    "assign_dist": list(n.policy.assign_dist),
                    "initial_channel": n.initial_channel,
                }
                for n in self.nodes
            ],
        }
