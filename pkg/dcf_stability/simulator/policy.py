import enum
from dataclasses import dataclass

import numpy as np

from dcf_stability.common import ParameterError


class PolicyKind(enum.Enum):
    STATIC = "static"
    # switch after success
    SAS = "sas"
    # switch after collision, backoff stage kept
    SAC = "sac"
    PACKET_ASSIGN = "packet_assign"


class MacEvent(enum.Enum):
    SUCCESS = "success"
    COLLISION = "collision"


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind = PolicyKind.STATIC
    switch_probs: tuple[float, ...] = ()
    assign_dist: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if any(not 0 <= a <= 1 for a in self.switch_probs):
            msg = f"switch probabilities must lie in [0, 1], got {self.switch_probs}"
            raise ParameterError(msg)
        if self.kind in (PolicyKind.SAS, PolicyKind.SAC) and not self.switch_probs:
            msg = f"{self.kind.value} policy needs per-stage switch probabilities"
            raise ParameterError(msg)
        if self.kind is PolicyKind.PACKET_ASSIGN:
            dist = np.asarray(self.assign_dist, dtype=np.float64)
            if dist.size == 0 or np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
                msg = f"packet assignment must be a distribution, got {self.assign_dist}"
                raise ParameterError(msg)

    @classmethod
    def uniform(cls, kind: PolicyKind, prob: float, max_stage: int) -> "PolicySpec":
        return cls(kind=kind, switch_probs=(prob,) * (max_stage + 1))

    @classmethod
    def stage_ramp(cls, kind: PolicyKind, max_stage: int) -> "PolicySpec":
        """α_i = i/m: switching grows likelier with the backoff stage."""
        if max_stage == 0:
            return cls(kind=kind, switch_probs=(0.0,))
        return cls(
            kind=kind,
            switch_probs=tuple(i / max_stage for i in range(max_stage + 1)),
        )

    def switch_prob(self, stage: int) -> float:
        return self.switch_probs[min(stage, len(self.switch_probs) - 1)]


@dataclass
class NodeState:
    channel: int = 0
    stage: int = 0
    timer: int = 0
    in_service: bool = False


def _other_channel(current: int, n_channels: int, rng: np.random.Generator) -> int:
    pick = int(rng.integers(0, n_channels - 1))
    return pick if pick < current else pick + 1


def apply_policy(
    node: NodeState,
    event: MacEvent,
    policy: PolicySpec,
    rng: np.random.Generator,
    n_channels: int,
    max_stage: int,
) -> tuple[int, int]:
    """Channel and backoff stage for the node after a MAC outcome.

    The node is not mutated. Success resets the stage; collision advances it,
    capped at `max_stage`. Switching probabilities are indexed by the stage
    the node was in when the outcome occurred.
    """
    if event is MacEvent.SUCCESS:
        stage = 0
    else:
        stage = min(node.stage + 1, max_stage)
    channel = node.channel
    if n_channels < 2:
        return channel, stage
    if policy.kind is PolicyKind.PACKET_ASSIGN:
        if event is MacEvent.SUCCESS:
            channel = int(rng.choice(n_channels, p=np.asarray(policy.assign_dist)))
        return channel, stage
    triggered = (policy.kind is PolicyKind.SAS and event is MacEvent.SUCCESS) or (
        policy.kind is PolicyKind.SAC and event is MacEvent.COLLISION
    )
    if triggered:
        prob = policy.switch_prob(node.stage)
        if prob > 0 and rng.random() < prob:
            channel = _other_channel(node.channel, n_channels, rng)
    return channel, stage
