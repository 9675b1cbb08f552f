"""Deterministic discrete-event message fabric.

Time is an integer tick. Messages are delivered in (deliver_tick, insertion
order); every latency is at least one tick. All randomness comes from
SplitMix64 streams derived from the scenario seed, so a run is a pure
function of its configuration.
"""
from __future__ import annotations

import heapq
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from itertools import count
from typing import Any, Callable, Iterable, Sequence

from .errors import ConfigError, SimulationIdle
from .rng import SplitMix64, stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FixedLatency:
    ticks: int = 1

    def __post_init__(self) -> None:
        if self.ticks < 1:
            raise ConfigError("latency must be at least one tick", "latency.ticks")

    def sample(self, rng: SplitMix64) -> int:
        return self.ticks


@dataclass(frozen=True)
class UniformLatency:
    low: int = 1
    high: int = 3

    def __post_init__(self) -> None:
        if self.low < 1:
            raise ConfigError("latency must be at least one tick", "latency.low")
        if self.high < self.low:
            raise ConfigError("high must be >= low", "latency.high")

    def sample(self, rng: SplitMix64) -> int:
        return rng.randint(self.low, self.high)


LatencyModel = FixedLatency | UniformLatency


@dataclass(frozen=True)
class Envelope:
    src: int
    dst: int
    kind: str
    payload: Any
    send_tick: int
    deliver_tick: int

    def trace_line(self) -> str:
        return json.dumps({"tick": self.deliver_tick, "from": self.src, "to": self.dst, "kind": self.kind},
                          separators=(",", ":"))


@dataclass(frozen=True)
class Partition:
    """Nodes in ``side_a`` cannot reach ``side_b`` (both ways) during [start, end)."""

    start: int
    end: int
    side_a: frozenset[int]
    side_b: frozenset[int]

    def active(self, tick: int) -> bool:
        return self.start <= tick < self.end

    def separates(self, a: int, b: int) -> bool:
        return (a in self.side_a and b in self.side_b) or (a in self.side_b and b in self.side_a)


@dataclass(frozen=True)
class FaultPlan:
    crashes: dict[int, int] = field(default_factory=dict)
    partitions: tuple[Partition, ...] = ()
    byzantine: frozenset[int] = frozenset()
    drop_rate: float = 0.0
    duplicate_rate: float = 0.0

    def validate(self, n: int) -> None:
        for name in ("drop_rate", "duplicate_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"rate {rate} not in [0, 1]", f"faults.{name}")
        for node, tick in self.crashes.items():
            if not 0 <= node < n:
                raise ConfigError(f"unknown node {node}", "faults.crashes")
            if tick < 0:
                raise ConfigError("crash tick must be >= 0", f"faults.crashes.{node}")
        for node in self.byzantine:
            if not 0 <= node < n:
                raise ConfigError(f"unknown node {node}", "faults.byzantine")
        for i, p in enumerate(self.partitions):
            check_partition(p, n, f"faults.partitions[{i}]")
        check_partition_overlaps(self.partitions)


def check_partition(p: Partition, n: int, path: str = "partition") -> None:
    if p.end < p.start:
        raise ConfigError("end before start", path)
    if p.side_a & p.side_b:
        raise ConfigError("partition sides must be disjoint", path)
    for node in p.side_a | p.side_b:
        if not 0 <= node < n:
            raise ConfigError(f"unknown node {node}", path)


def check_partition_overlaps(partitions: Sequence[Partition]) -> None:
    """Partitions overlapping in time must split disjoint node groups, or be the same split."""
    for i, p in enumerate(partitions):
        for q in partitions[i + 1:]:
            if p.start >= q.end or q.start >= p.end:
                continue
            if not (p.side_a | p.side_b) & (q.side_a | q.side_b):
                continue
            if {p.side_a, p.side_b} != {q.side_a, q.side_b}:
                raise ConfigError(f"contradictory overlapping partitions in [{max(p.start, q.start)}, "
                                  f"{min(p.end, q.end)})", "faults.partitions")


class Network:
    def __init__(self, n: int, seed: int, latency: LatencyModel = FixedLatency(1),
                 faults: FaultPlan | None = None, trace: bool = False) -> None:
        if n < 1:
            raise ConfigError("need at least one node", "nodes")
        self.n = n
        self.seed = seed
        self.latency = latency
        self.faults = faults or FaultPlan()
        self.faults.validate(n)
        self.now = 0
        self.rng = stream(seed, "net")
        self._queue: list[tuple[int, int, Envelope]] = []
        self._seq = count()
        self.sent: Counter[str] = Counter()
        self.dropped: Counter[str] = Counter()
        self.delivered = 0
        self.trace: list[str] | None = [] if trace else None

    def rng_for(self, node: int, *keys: int | str) -> SplitMix64:
        return stream(self.seed, node, *keys)

    def _check(self, node: int) -> None:
        if not 0 <= node < self.n:
            raise ValueError(f"unknown node {node}")

    def is_crashed(self, node: int, tick: int | None = None) -> bool:
        at = self.faults.crashes.get(node)
        return at is not None and (self.now if tick is None else tick) >= at

    def live_nodes(self) -> list[int]:
        return [i for i in range(self.n) if not self.is_crashed(i)]

    def is_byzantine(self, node: int) -> bool:
        return node in self.faults.byzantine

    def partitioned(self, a: int, b: int, tick: int | None = None) -> bool:
        t = self.now if tick is None else tick
        return any(p.active(t) and p.separates(a, b) for p in self.faults.partitions)

    def set_partition(self, start: int, end: int, side_a: Iterable[int], side_b: Iterable[int]) -> Partition:
        p = Partition(start, end, frozenset(side_a), frozenset(side_b))
        check_partition(p, self.n)
        partitions = self.faults.partitions + (p,)
        check_partition_overlaps(partitions)
        self.faults = replace(self.faults, partitions=partitions)
        return p

    def heal(self, tick: int | None = None) -> None:
        """End every partition still active at ``tick`` (default: now)."""
        t = self.now if tick is None else tick
        self.faults = replace(self.faults, partitions=tuple(
            replace(p, end=t) if p.start <= t < p.end else p for p in self.faults.partitions))

    def _enqueue(self, env: Envelope) -> None:
        heapq.heappush(self._queue, (env.deliver_tick, next(self._seq), env))

    def send(self, src: int, dst: int, kind: str, payload: Any = None) -> Envelope | None:
        """Schedule one message. Returns None if the message is dropped."""
        self._check(src)
        self._check(dst)
        self.sent[kind] += 1
        if self.partitioned(src, dst):
            self.dropped["partition"] += 1
            return None
        if self.faults.drop_rate and self.rng.random() < self.faults.drop_rate:
            self.dropped["random"] += 1
            return None
        delay = self.latency.sample(self.rng)
        env = Envelope(src, dst, kind, payload, self.now, self.now + delay)
        self._enqueue(env)
        if self.faults.duplicate_rate and self.rng.random() < self.faults.duplicate_rate:
            again = self.now + self.latency.sample(self.rng)
            if again == env.deliver_tick:
                again += 1
            self._enqueue(replace(env, deliver_tick=again))
        return env

    def broadcast(self, src: int, kind: str, payload: Any = None) -> list[Envelope]:
        out = []
        for dst in range(self.n):
            if dst == src or self.is_crashed(dst):
                continue
            env = self.send(src, dst, kind, payload)
            if env is not None:
                out.append(env)
        return out

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> tuple[int, list[Envelope]]:
        """Advance to the next delivery tick and pop everything due then."""
        if not self._queue:
            raise SimulationIdle()
        tick = self._queue[0][0]
        self.now = max(self.now, tick)
        out = []
        while self._queue and self._queue[0][0] == tick:
            env = heapq.heappop(self._queue)[2]
            if self.is_crashed(env.dst, tick):
                self.dropped["crashed"] += 1
                continue
            self.delivered += 1
            if self.trace is not None:
                self.trace.append(env.trace_line())
            out.append(env)
        return tick, out

    def run_until(self, tick: int, deliver: Callable[[Envelope], None]) -> None:
        """Deliver every message due at or before ``tick``, then set the clock to ``tick``.

        Messages sent by ``deliver`` arrive no earlier than the next tick, so
        handling a batch never reorders already-due traffic.
        """
        while self._queue and self._queue[0][0] <= tick:
            _, batch = self.step()
            for env in batch:
                deliver(env)
        self.now = tick


class SimNode:
    """Base class for protocol participants driven by :func:`run_loop`."""

    def __init__(self, node_id: int, net: Network) -> None:
        self.id = node_id
        self.net = net

    @property
    def byzantine(self) -> bool:
        return self.net.is_byzantine(self.id)

    def send(self, dst: int, kind: str, payload: Any = None) -> Envelope | None:
        return self.net.send(self.id, dst, kind, payload)

    def broadcast(self, kind: str, payload: Any = None) -> list[Envelope]:
        return self.net.broadcast(self.id, kind, payload)

    def on_message(self, env: Envelope) -> None:
        pass

    def on_tick(self, tick: int) -> None:
        pass


def run_loop(net: Network, nodes: Sequence[SimNode], duration: int,
             before_tick: Callable[[int], None] | None = None) -> None:
    """Drive ``nodes`` for ticks 0..duration-1: deliveries first, then tick actions."""
    def deliver(env: Envelope) -> None:
        nodes[env.dst].on_message(env)

    for tick in range(duration):
        net.run_until(tick, deliver)
        if before_tick is not None:
            before_tick(tick)
        for node in nodes:
            if not net.is_crashed(node.id, tick):
                node.on_tick(tick)
