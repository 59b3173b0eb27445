import math
from collections.abc import Generator
from typing import Any

import numpy as np
import simpy
from twisted.logger import Logger

from dcf_stability.core import ChannelSpec

from .config import SimConfig
from .policy import MacEvent, NodeState, apply_policy
from .report import SimReport

log = Logger()

GENERATOR = "numpy.random.PCG64"

# boundary rounding slack, in slots
BOUNDARY_EPS = 1e-9

Process = Generator[simpy.Event, Any, None]


class _Channel:
    def __init__(self, env: simpy.Environment, spec: ChannelSpec) -> None:
        self.spec = spec
        # start time of the next slot once the channel is idle
        self.anchor = 0.0
        self.busy = False
        self.slots = 0
        self.elapsed = 0.0
        self.members: set[int] = set()
        self.contenders: set[int] = set()
        # nodes that switched in during a transmission
        self.pending: list[int] = []
        self.wakeup = env.event()

    def notify(self) -> None:
        """Wake the contention process after its contender set changed."""
        if not self.wakeup.triggered:
            self.wakeup.succeed()


class _Simulation:
    def __init__(self, config: SimConfig) -> None:
        self.config = config
        self.params = config.params
        self.sigma = config.params.sigma
        self.rng = np.random.default_rng(config.seed)
        self.env = simpy.Environment()
        n = len(config.nodes)
        k = len(config.channels)
        self.n_channels = k
        self.nodes = [NodeState(channel=spec.initial_channel) for spec in config.nodes]
        # items are arrival times; the head is the packet in service
        self.queues = [simpy.Store(self.env) for _ in config.nodes]
        self.channels = [_Channel(self.env, spec) for spec in config.channels]
        self.synced = [True] * n
        self.events = 0

        self.arrivals = np.zeros(n, dtype=np.int64)
        self.successes = np.zeros((n, k), dtype=np.int64)
        self.collisions = np.zeros((n, k), dtype=np.int64)
        self.attempts = np.zeros((n, k), dtype=np.int64)
        self.contender_slots = np.zeros((n, k), dtype=np.int64)
        self.member_slots = np.zeros((n, k), dtype=np.int64)
        self.contender_mark = [0] * n
        self.member_mark = [0] * n
        self.busy_since = [0.0] * n
        self.busy_time = np.zeros(n)
        self.channel_since = [0.0] * n
        self.occupancy_time = np.zeros((n, k))
        self.sample_times: list[float] = []
        self.population_samples: list[list[int]] = []
        self.throughput_samples: list[list[float]] = []

    def _backlog(self, i: int) -> int:
        return len(self.queues[i].items)

    def _draw_timer(self, stage: int) -> int:
        return int(self.rng.integers(0, (1 << stage) * self.params.window))

    def _fast_forward(self, c: int, slots: int) -> None:
        if slots <= 0:
            return
        ch = self.channels[c]
        for i in ch.contenders:
            self.nodes[i].timer -= slots
        ch.slots += slots
        ch.elapsed += slots * self.sigma
        ch.anchor += slots * self.sigma

    def _advance_to_boundary(self, c: int) -> None:
        """Move an idle channel to its first slot boundary at or after now."""
        ch = self.channels[c]
        slots = max(0, math.ceil((self.env.now - ch.anchor) / self.sigma - BOUNDARY_EPS))
        if ch.contenders:
            slots = min(slots, min(self.nodes[i].timer for i in ch.contenders))
        self._fast_forward(c, slots)

    def _enter_contention(self, i: int, c: int) -> None:
        node = self.nodes[i]
        if not node.in_service:
            node.stage = 0
            node.timer = self._draw_timer(0)
            node.in_service = True
        ch = self.channels[c]
        ch.contenders.add(i)
        self.contender_mark[i] = ch.slots

    def _leave_contention(self, i: int, c: int) -> None:
        ch = self.channels[c]
        ch.contenders.discard(i)
        self.contender_slots[i, c] += ch.slots - self.contender_mark[i]

    def _sync(self, i: int, c: int) -> None:
        ch = self.channels[c]
        ch.members.add(i)
        self.synced[i] = True
        self.member_mark[i] = ch.slots
        if self._backlog(i) > 0:
            self._enter_contention(i, c)

    def _unsync(self, i: int, c: int) -> None:
        ch = self.channels[c]
        if i in ch.contenders:
            self._leave_contention(i, c)
        ch.members.discard(i)
        self.member_slots[i, c] += ch.slots - self.member_mark[i]
        self.synced[i] = False

    def _move(self, i: int, target: int) -> None:
        now = self.env.now
        node = self.nodes[i]
        self._unsync(i, node.channel)
        self.occupancy_time[i, node.channel] += now - self.channel_since[i]
        self.channel_since[i] = now
        node.channel = target
        ch = self.channels[target]
        if ch.busy:
            # countdown resumes once the ongoing transmission ends
            ch.pending.append(i)
            return
        self._advance_to_boundary(target)
        self._sync(i, target)
        ch.notify()

    def _arrivals(self, i: int) -> Process:
        mean_gap = self.params.payload_bits / self.config.nodes[i].rate
        while True:
            yield self.env.timeout(self.rng.exponential(mean_gap))
            self.queues[i].put(self.env.now)
            self._on_arrival(i)

    def _on_arrival(self, i: int) -> None:
        self.arrivals[i] += 1
        self.events += 1
        if self._backlog(i) > 1:
            return
        self.busy_since[i] = self.env.now
        if not self.synced[i]:
            return
        c = self.nodes[i].channel
        ch = self.channels[c]
        if ch.busy:
            return
        self._advance_to_boundary(c)
        self._enter_contention(i, c)
        ch.notify()

    def _contend(self, c: int) -> Process:
        """Count idle slots down to the next attempt, then hold the channel for it."""
        ch = self.channels[c]
        while True:
            ch.wakeup = self.env.event()
            if not ch.contenders:
                yield ch.wakeup
                continue
            wait = min(self.nodes[i].timer for i in ch.contenders)
            delay = max(0.0, ch.anchor + wait * self.sigma - self.env.now)
            yield self.env.timeout(delay) | ch.wakeup
            if ch.wakeup.triggered:
                # the notifier already moved the clock to the current boundary
                continue
            self._fast_forward(c, wait)
            transmitters = sorted(i for i in ch.contenders if self.nodes[i].timer == 0)
            for i in transmitters:
                self.attempts[i, c] += 1
            duration = ch.spec.t_s if len(transmitters) == 1 else ch.spec.t_c
            ch.busy = True
            self.events += 1
            yield self.env.timeout(duration)
            self._end_slot(c, transmitters, duration)

    def _end_slot(self, c: int, transmitters: list[int], duration: float) -> None:
        now = self.env.now
        ch = self.channels[c]
        ch.busy = False
        ch.slots += 1
        ch.elapsed += duration
        ch.anchor = now
        for i in ch.contenders:
            if i not in transmitters:
                self.nodes[i].timer -= 1
        success = len(transmitters) == 1
        event = MacEvent.SUCCESS if success else MacEvent.COLLISION
        moves: list[tuple[int, int]] = []
        for i in transmitters:
            node = self.nodes[i]
            target, stage = apply_policy(
                node,
                event,
                self.config.nodes[i].policy,
                self.rng,
                self.n_channels,
                self.params.max_stage,
            )
            node.stage = stage
            if success:
                self.successes[i, c] += 1
                self.queues[i].get()
                node.in_service = False
                if self._backlog(i) > 0:
                    node.timer = self._draw_timer(0)
                    node.in_service = True
                else:
                    self.busy_time[i] += now - self.busy_since[i]
                    self._leave_contention(i, c)
            else:
                self.collisions[i, c] += 1
                node.timer = self._draw_timer(stage)
            if target != c:
                moves.append((i, target))
        for i, target in moves:
            self._move(i, target)
        pending = ch.pending
        ch.pending = []
        for i in pending:
            self._sync(i, c)
        for i in sorted(ch.members - ch.contenders):
            if self._backlog(i) > 0:
                self._enter_contention(i, c)

    def _sample(self) -> Process:
        interval = self.config.sample_interval
        while True:
            yield self.env.timeout(interval)
            now = self.env.now
            counts = np.bincount(
                [node.channel for node in self.nodes], minlength=self.n_channels
            )
            self.events += 1
            self.sample_times.append(now)
            self.population_samples.append(counts.tolist())
            delivered = self.successes.sum(axis=1) * self.params.payload_bits / now
            self.throughput_samples.append(delivered.tolist())

    def run(self) -> SimReport:
        for i, spec in enumerate(self.config.nodes):
            if spec.rate > 0:
                self.env.process(self._arrivals(i))
        for i, node in enumerate(self.nodes):
            self.channels[node.channel].members.add(i)
        for c in range(self.n_channels):
            self.env.process(self._contend(c))
        if self.config.sample_interval > 0:
            self.env.process(self._sample())
        self.env.run(until=self.config.t_f)
        return self._finish()

    def _finish(self) -> SimReport:
        t_f = self.config.t_f
        n = len(self.nodes)
        for c, ch in enumerate(self.channels):
            if not ch.busy and ch.anchor < t_f:
                slots = math.floor((t_f - ch.anchor) / self.sigma)
                if ch.contenders:
                    slots = min(slots, min(self.nodes[i].timer for i in ch.contenders))
                self._fast_forward(c, slots)
            for i in sorted(ch.contenders):
                self.contender_slots[i, c] += ch.slots - self.contender_mark[i]
            for i in sorted(ch.members):
                self.member_slots[i, c] += ch.slots - self.member_mark[i]
        for i, node in enumerate(self.nodes):
            if self._backlog(i) > 0:
                self.busy_time[i] += t_f - self.busy_since[i]
            self.occupancy_time[i, node.channel] += t_f - self.channel_since[i]

        payload = self.params.payload_bits
        served = self.successes.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            empirical_tau = np.where(
                self.contender_slots > 0, self.attempts / self.contender_slots, np.nan
            )
            member_total = self.member_slots.sum(axis=1)
            slot_fraction = np.where(
                member_total > 0, self.contender_slots.sum(axis=1) / member_total, 0.0
            )
            assignment = np.where(
                served[:, np.newaxis] > 0,
                self.successes / served[:, np.newaxis],
                0.0,
            )
        in_service = np.array([node.in_service for node in self.nodes], dtype=bool)
        queue = np.array([self._backlog(i) for i in range(n)], dtype=np.int64)
        samples = np.array(self.population_samples, dtype=np.int64).reshape(
            -1, self.n_channels
        )
        histogram = np.stack(
            [np.bincount(samples[:, c], minlength=n + 1) for c in range(self.n_channels)]
        )
        throughput = served * payload / t_f
        log.info(
            "simulated {t_f} s with {nodes} nodes on {channels} channels: {events} events, seed {seed}",
            t_f=t_f,
            nodes=n,
            channels=self.n_channels,
            events=self.events,
            seed=self.config.seed,
        )
        return SimReport(
            t_f=t_f,
            seed=self.config.seed,
            generator=GENERATOR,
            events=self.events,
            throughput=throughput,
            aggregate_throughput=float(throughput.sum()),
            arrivals=self.arrivals.copy(),
            backlog=queue - in_service.astype(np.int64),
            in_service=in_service,
            successes=self.successes.copy(),
            collisions=self.collisions.copy(),
            attempts=self.attempts.copy(),
            contender_slots=self.contender_slots.copy(),
            member_slots=self.member_slots.copy(),
            empirical_tau=empirical_tau,
            slot_fraction_busy=slot_fraction,
            time_fraction_busy=self.busy_time / t_f,
            occupancy_time=self.occupancy_time / t_f,
            packet_assignment=assignment,
            channel_slots=np.array([ch.slots for ch in self.channels], dtype=np.int64),
            channel_elapsed=np.array([ch.elapsed for ch in self.channels]),
            sample_times=np.array(self.sample_times),
            population_samples=samples,
            throughput_samples=np.array(self.throughput_samples).reshape(-1, n),
            population_histogram=histogram,
        )


def simulate(config: SimConfig) -> SimReport:
    """Run one seeded discrete-event simulation of the configured WLAN."""
    return _Simulation(config).run()
