"""Exhaustive delivery-order exploration of small PBFT instances with an equivocating primary.

The network is scripted: the explorer decides which in-flight message is
delivered next and no timers fire (pure asynchrony, every message eventually
arrives). Only the first pre-prepare to reach each (replica, sequence) slot
branches. After that choice a replica's behaviour is monotone threshold logic
over growing vote sets, so the order of its other deliveries cannot change its
final state, and deliveries to different replicas commute; those are made
first-in first-out. :func:`random_orders` drops this reduction and samples
fully random interleavings, which the tests use to check that no outcome
escapes the reduced search.
"""
from __future__ import annotations

import copy
import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterator, Sequence

from ..chain import Digest, hash_bytes
from ..netsim import Envelope
from ..rng import stream
from .pbft import Commit, Prepare, PrePrepare, Replica, primary_of

STRATEGIES = ("silent", "all", "split", "split_reversed")


class ScriptedNet:
    """Just enough of Network for replicas; sends are parked until the explorer delivers them."""

    def __init__(self, n: int, byzantine: Sequence[int]) -> None:
        self.n = n
        self.seed = 0
        self.now = 0
        self.byzantine = frozenset(byzantine)
        self.inflight: list[Envelope] = []
        self.sent: Counter[str] = Counter()

    def is_byzantine(self, node: int) -> bool:
        return node in self.byzantine

    def is_crashed(self, node: int, tick: int | None = None) -> bool:
        return False

    def send(self, src: int, dst: int, kind: str, payload: Any = None) -> Envelope:
        self.sent[kind] += 1
        env = Envelope(src, dst, kind, payload, self.now, self.now)
        if dst not in self.byzantine:
            # the Byzantine replica's behaviour is scripted up front; its inbox is irrelevant
            self.inflight.append(env)
        return env

    def broadcast(self, src: int, kind: str, payload: Any = None) -> list[Envelope]:
        return [self.send(src, dst, kind, payload) for dst in range(self.n) if dst != src]


@dataclass(frozen=True)
class SweepCase:
    """What the Byzantine primary sends. ``candidates[s]`` are the two digests it may give seq s+1."""

    requests: tuple[bytes, ...]
    candidates: tuple[tuple[bytes, bytes], ...]
    withheld: frozenset[tuple[int, int]]  # (backup, seq) pairs that receive no pre-prepare
    strategy: str


@dataclass(frozen=True)
class Outcome:
    executed: tuple[tuple[int, tuple[tuple[int, Digest], ...]], ...]

    def conflicts(self) -> int:
        seen: dict[int, set[Digest]] = {}
        for _, log in self.executed:
            for seq, d in log:
                seen.setdefault(seq, set()).add(d)
        return sum(1 for ds in seen.values() if len(ds) > 1)


class World:
    def __init__(self, n: int, byzantine: int, quorum: int | None = None) -> None:
        self.net = ScriptedNet(n, [byzantine])
        self.replicas = [Replica(i, self.net, view_timeout=1 << 30, quorum_size=quorum) for i in range(n)]
        self.honest = [r for r in self.replicas if r.id != byzantine]

    def deliver(self, index: int) -> None:
        env = self.net.inflight.pop(index)
        self.replicas[env.dst].on_message(env)

    def outcome(self) -> Outcome:
        return Outcome(tuple((r.id, tuple(sorted(r.executed.items()))) for r in self.honest))

    def key(self) -> tuple:
        return (tuple(replica_key(r) for r in self.honest),
                tuple(sorted(repr((e.src, e.dst, e.kind, e.payload)) for e in self.net.inflight)))


def replica_key(r: Replica) -> tuple:
    slots = []
    for k in sorted(r.log):
        s = r.log[k]
        slots.append((k, s.preprepare,
                      tuple(sorted((d, frozenset(v)) for d, v in s.prepares.items() if v)),
                      tuple(sorted((d, frozenset(v)) for d, v in s.commits.items() if v)),
                      s.prepared, s.committed))
    return (r.view, tuple(slots), tuple(sorted(r.executed.items())))


def setup(case: SweepCase, n: int = 4, byzantine: int = 0, quorum: int | None = None) -> World:
    """Emit the Byzantine primary's scripted messages into a fresh world."""
    if primary_of(0, n) != byzantine:
        raise ValueError("the sweep scripts an equivocating primary; byzantine must be the view-0 primary")
    world = World(n, byzantine, quorum)
    net = world.net
    backups = [i for i in range(n) if i != byzantine]
    lower = set(backups[: (len(backups) + 1) // 2])
    for seq, pair in enumerate(case.candidates, start=1):
        for b in backups:
            if (b, seq) not in case.withheld:
                for body in pair:
                    net.send(byzantine, b, "preprepare", PrePrepare(0, seq, hash_bytes(body), body))
            if case.strategy == "silent":
                votes = ()
            elif case.strategy == "all":
                votes = pair
            else:
                first = (b in lower) == (case.strategy == "split")
                votes = (pair[0] if first else pair[1],)
            for body in votes:
                d = hash_bytes(body)
                net.send(byzantine, b, "prepare", Prepare(0, seq, d, byzantine))
                net.send(byzantine, b, "commit", Commit(0, seq, d, byzantine))
    return world


def _forced(world: World, env: Envelope) -> bool:
    """Deliveries whose position in the order cannot matter."""
    if env.kind != "preprepare":
        return True
    slot = world.replicas[env.dst].log.get((env.payload.view, env.payload.seq))
    return slot is not None and slot.preprepare is not None


def explore(case: SweepCase, n: int = 4, byzantine: int = 0, quorum: int | None = None) -> tuple[set[Outcome], int]:
    """All outcomes reachable over delivery orders; returns (outcomes, states visited).

    Deliveries to different replicas commute, so only the first pre-prepare to
    reach each (replica, sequence) slot needs branching, taken slot by slot.
    """
    outcomes: set[Outcome] = set()
    seen: set[tuple] = set()
    stack = [setup(case, n, byzantine, quorum)]
    while stack:
        world = stack.pop()
        while True:
            idx = next((i for i, e in enumerate(world.net.inflight) if _forced(world, e)), None)
            if idx is None:
                break
            world.deliver(idx)
        key = world.key()
        if key in seen:
            continue
        seen.add(key)
        if not world.net.inflight:
            outcomes.add(world.outcome())
            continue
        group = min((e.dst, e.payload.seq) for e in world.net.inflight)
        choices: dict[str, int] = {}
        for i, e in enumerate(world.net.inflight):
            if (e.dst, e.payload.seq) == group:
                choices.setdefault(repr(e.payload), i)
        for i in sorted(choices.values(), reverse=True):
            branch = copy.deepcopy(world)
            branch.deliver(i)
            stack.append(branch)
    return outcomes, len(seen)


def random_orders(case: SweepCase, runs: int, seed: int, n: int = 4, byzantine: int = 0) -> Iterator[Outcome]:
    """Outcomes of ``runs`` fully random delivery orders (no reduction)."""
    rng = stream(seed, "pbft-sweep")
    for _ in range(runs):
        world = setup(case, n, byzantine)
        while world.net.inflight:
            world.deliver(rng.randrange(len(world.net.inflight)))
        yield world.outcome()


def sweep_cases(requests: int, n: int = 4, byzantine: int = 0) -> Iterator[SweepCase]:
    """Every withholding pattern crossed with every scripted vote strategy."""
    if requests == 1:
        reqs = (b"req|0",)
        candidates: tuple[tuple[bytes, bytes], ...] = ((b"req|0", b"req|0#evil"),)
    elif requests == 2:
        reqs = (b"req|0", b"req|1")
        # the primary may order the two genuine requests differently for different backups
        candidates = ((b"req|0", b"req|1"), (b"req|1", b"req|0"))
    else:
        raise ValueError("the sweep covers one or two requests")
    backups = [i for i in range(n) if i != byzantine]
    slots = [(b, s) for b in backups for s in range(1, len(candidates) + 1)]
    for mask in itertools.product((False, True), repeat=len(slots)):
        withheld = frozenset(slot for slot, w in zip(slots, mask) if w)
        for strategy in STRATEGIES:
            yield SweepCase(reqs, candidates, withheld, strategy)


@dataclass(frozen=True)
class SweepResult:
    cases: int
    states: int
    outcomes: int
    conflicts: int
    executed_any: int


def run_sweep(max_requests: int = 2, n: int = 4, byzantine: int = 0, quorum: int | None = None) -> SweepResult:
    cases = states = outcomes = conflicts = executed = 0
    for requests in range(1, max_requests + 1):
        for case in sweep_cases(requests, n, byzantine):
            found, visited = explore(case, n, byzantine, quorum)
            cases += 1
            states += visited
            outcomes += len(found)
            conflicts += sum(o.conflicts() for o in found)
            executed += sum(1 for o in found if any(log for _, log in o.executed))
    return SweepResult(cases, states, outcomes, conflicts, executed)
