from dataclasses import dataclass, fields
from typing import Any

import numpy as np

from dcf_stability.common import ParameterError, to_jsonable

from .config import SimConfig

IntArray = np.ndarray
FloatArray = np.ndarray


@dataclass(frozen=True)
class SimReport:
    """Empirical outcome of one simulation run.

    Per-node arrays are indexed [node] and per-node per-channel arrays
    [node, channel]. `backlog` counts packets still waiting at T_f, without
    the head-of-line packet whose service had begun (`in_service`).
    """

    t_f: float
    seed: int
    generator: str
    events: int
    throughput: FloatArray
    aggregate_throughput: float
    arrivals: IntArray
    backlog: IntArray
    in_service: np.ndarray
    successes: IntArray
    collisions: IntArray
    attempts: IntArray
    contender_slots: IntArray
    member_slots: IntArray
    empirical_tau: FloatArray
    slot_fraction_busy: FloatArray
    time_fraction_busy: FloatArray
    occupancy_time: FloatArray
    packet_assignment: FloatArray
    channel_slots: IntArray
    channel_elapsed: FloatArray
    sample_times: FloatArray
    population_samples: IntArray
    throughput_samples: FloatArray
    population_histogram: IntArray

    @property
    def n_nodes(self) -> int:
        return int(self.throughput.shape[0])

    @property
    def n_channels(self) -> int:
        return int(self.channel_slots.shape[0])

    def to_dict(self) -> dict[str, Any]:
        return {f.name: to_jsonable(getattr(self, f.name)) for f in fields(self)}

    def population_rows(self) -> list[list[Any]]:
        return [
            [t, *counts.tolist()]
            for t, counts in zip(self.sample_times, self.population_samples, strict=True)
        ]

    def throughput_rows(self) -> list[list[Any]]:
        return [
            [t, *values.tolist()]
            for t, values in zip(self.sample_times, self.throughput_samples, strict=True)
        ]


@dataclass(frozen=True)
class NodeMargin:
    node: int
    rate: float
    throughput: float
    backlog_ratio: float
    skipped: bool

    @property
    def throughput_deficit(self) -> float:
        return self.rate - self.throughput


@dataclass(frozen=True)
class StabilityClassification:
    unstable: bool
    margins: list[NodeMargin]


def classify_stability(report: SimReport, config: SimConfig) -> StabilityClassification:
    """A run is unstable when some loaded node both falls short of its offered
    load and ends with a backlog above the α share of its arrivals.

    Zero-rate nodes are skipped; the queued total includes the packet in service.
    """
    payload = config.params.payload_bits
    margins = []
    unstable = False
    for i, node in enumerate(config.nodes):
        if node.rate <= 0:
            margins.append(NodeMargin(i, node.rate, float(report.throughput[i]), 0.0, skipped=True))
            continue
        queued = int(report.backlog[i]) + int(bool(report.in_service[i]))
        ratio = queued * payload / (node.rate * report.t_f)
        margin = NodeMargin(i, node.rate, float(report.throughput[i]), ratio, skipped=False)
        margins.append(margin)
        if margin.throughput < node.rate and ratio > config.alpha_threshold:
            unstable = True
    return StabilityClassification(unstable=unstable, margins=margins)


def population_histogram(report: SimReport, channel: int) -> IntArray:
    """Counts of sampled node populations 0..N in `channel`."""
    if not 0 <= channel < report.n_channels:
        msg = f"channel {channel} out of range for {report.n_channels} channels"
        raise ParameterError(msg)
    if report.sample_times.size == 0:
        msg = "population sampling was disabled for this run"
        raise ParameterError(msg)
    return report.population_histogram[channel].copy()


def mean_population(report: SimReport, channel: int) -> float:
    hist = population_histogram(report, channel)
    return float(np.dot(np.arange(hist.size), hist) / hist.sum())
