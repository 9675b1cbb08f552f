"""PBFT replicas: pre-prepare / prepare / commit over n = 3f + 1, with view change.

Every replica (the primary included) broadcasts a Prepare for the pre-prepare
it accepted; a replica is *prepared* once it holds the pre-prepare and
matching Prepares from a quorum of distinct replicas counting itself, and
commits once it also holds a quorum of matching Commits. Executed requests are
appended to a local chain, one block per sequence number.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from statistics import fmean

from ..chain import ChainStore, Digest, Transaction, genesis_block, hash_bytes, make_block
from ..errors import ConfigError
from ..netsim import Envelope, Network, SimNode
from .base import NodeView

WATERMARK_WINDOW = 100
NULL_REQUEST = b""
NULL_DIGEST = hash_bytes(NULL_REQUEST)
PROTOCOL_KINDS = ("preprepare", "prepare", "commit", "viewchange", "newview", "forward")


def quorum(n: int) -> int:
    return 2 * n // 3 + 1


def max_faulty(n: int) -> int:
    return (n - 1) // 3


def primary_of(view: int, n: int) -> int:
    return view % n


@dataclass(frozen=True)
class PrePrepare:
    view: int
    seq: int
    digest: Digest
    request: bytes


@dataclass(frozen=True)
class Prepare:
    view: int
    seq: int
    digest: Digest
    sender: int


@dataclass(frozen=True)
class Commit:
    view: int
    seq: int
    digest: Digest
    sender: int


@dataclass(frozen=True)
class QuorumCert:
    view: int
    seq: int
    digest: Digest
    signers: frozenset[int]


@dataclass(frozen=True)
class ViewChange:
    new_view: int
    sender: int
    prepared: tuple[QuorumCert, ...]
    requests: tuple[tuple[Digest, bytes], ...]


@dataclass(frozen=True)
class NewView:
    view: int
    sender: int
    view_changes: tuple[ViewChange, ...]
    preprepares: tuple[PrePrepare, ...]


@dataclass
class Slot:
    preprepare: Digest | None = None
    prepares: dict[Digest, set[int]] = field(default_factory=lambda: defaultdict(set))
    commits: dict[Digest, set[int]] = field(default_factory=lambda: defaultdict(set))
    prepared: Digest | None = None
    committed: bool = False


def new_view_preprepares(view: int, vcs: tuple[ViewChange, ...]) -> tuple[PrePrepare, ...]:
    """Re-proposals for the new view: the highest-view certificate per sequence, null filler for gaps."""
    best: dict[int, QuorumCert] = {}
    payloads: dict[Digest, bytes] = {}
    for vc in vcs:
        payloads.update(vc.requests)
        for cert in vc.prepared:
            if cert.seq not in best or cert.view > best[cert.seq].view:
                best[cert.seq] = cert
    top = max(best, default=0)
    out = []
    for seq in range(1, top + 1):
        cert = best.get(seq)
        if cert is None:
            out.append(PrePrepare(view, seq, NULL_DIGEST, NULL_REQUEST))
        else:
            out.append(PrePrepare(view, seq, cert.digest, payloads.get(cert.digest, NULL_REQUEST)))
    return tuple(out)


class Replica(SimNode):
    def __init__(self, node_id: int, net: Network, view_timeout: int = 20,
                 quorum_size: int | None = None) -> None:
        super().__init__(node_id, net)
        self.n = net.n
        self.f = max_faulty(self.n)
        self.quorum = quorum_size or quorum(self.n)
        self.view = 0
        self.in_view_change = False
        self.log: dict[tuple[int, int], Slot] = {}
        self.requests: dict[Digest, bytes] = {}
        self.next_seq = 1
        self.assigned: dict[Digest, int] = {}
        self.executed: dict[int, Digest] = {}
        self.executed_digests: set[Digest] = set()
        self.last_executed = 0
        self.committed_waiting: dict[int, Digest] = {}
        self.pending: dict[Digest, int] = {}
        self.best_cert: dict[int, QuorumCert] = {}
        self.view_changes: dict[int, dict[int, ViewChange]] = defaultdict(dict)
        self.new_view_sent: set[int] = set()
        self.future: list[Envelope] = []
        self.base_timeout = view_timeout
        self.timeout = view_timeout
        self.deadline: int | None = None
        self.counters: Counter[str] = Counter()
        self.genesis = genesis_block(0)
        self.store = ChainStore(self.genesis)
        self.tip = self.genesis
        self.head_log = [self.genesis.digest]

    # helpers ------------------------------------------------------------------
    @property
    def primary(self) -> int:
        return primary_of(self.view, self.n)

    def is_primary(self) -> bool:
        return self.primary == self.id and not self.in_view_change

    def slot(self, view: int, seq: int) -> Slot:
        key = (view, seq)
        if key not in self.log:
            self.log[key] = Slot()
        return self.log[key]

    def in_window(self, seq: int) -> bool:
        return 0 < seq <= WATERMARK_WINDOW

    def arm_timer(self) -> None:
        if self.deadline is None and self.pending:
            self.deadline = self.net.now + self.timeout

    # client side -----------------------------------------------------------------
    def on_request(self, payload: bytes) -> None:
        d = hash_bytes(payload)
        if d in self.executed_digests:
            return
        self.requests[d] = payload
        if self.is_primary():
            self.assign(d)
            return
        self.pending.setdefault(d, self.net.now)
        self.arm_timer()
        self.counters["forwarded"] += 1
        self.send(self.primary, "forward", payload)

    def assign(self, d: Digest) -> None:
        if d in self.assigned or d in self.executed_digests:
            return
        if not self.in_window(self.next_seq):
            self.counters["window_full"] += 1
            return
        seq = self.next_seq
        self.next_seq += 1
        self.assigned[d] = seq
        payload = self.requests[d]
        if self.byzantine:
            self.equivocate(seq, payload)
            return
        pp = PrePrepare(self.view, seq, d, payload)
        self.broadcast("preprepare", pp)
        self.accept_preprepare(pp)

    def equivocate(self, seq: int, payload: bytes) -> None:
        """Send one request to the lower half of the backups and a conflicting one to the rest."""
        evil = payload + b"#evil"
        backups = [i for i in range(self.n) if i != self.id]
        half = len(backups) // 2 + len(backups) % 2
        for i, dst in enumerate(backups):
            body = payload if i < half else evil
            self.send(dst, "preprepare", PrePrepare(self.view, seq, hash_bytes(body), body))
        for body in (payload, evil):
            self.requests[hash_bytes(body)] = body
        self.counters["equivocations"] += 1

    # normal case ---------------------------------------------------------------
    def accept_preprepare(self, pp: PrePrepare) -> None:
        slot = self.slot(pp.view, pp.seq)
        if slot.preprepare is not None:
            if slot.preprepare != pp.digest:
                self.counters["conflicting_preprepare"] += 1
            return
        slot.preprepare = pp.digest
        self.requests[pp.digest] = pp.request
        if pp.digest != NULL_DIGEST and pp.digest not in self.executed_digests:
            self.pending.setdefault(pp.digest, self.net.now)
            self.arm_timer()
        self.vote("prepare", Prepare(pp.view, pp.seq, pp.digest, self.id))

    def vote(self, kind: str, msg: Prepare | Commit) -> None:
        self.broadcast(kind, msg)
        if kind == "prepare":
            self.on_prepare(msg)
        else:
            self.on_commit(msg)

    def on_preprepare(self, src: int, pp: PrePrepare) -> None:
        if src != primary_of(pp.view, self.n) or not self.in_window(pp.seq):
            self.counters["invalid_preprepare"] += 1
            return
        if hash_bytes(pp.request) != pp.digest:
            self.counters["invalid_preprepare"] += 1
            return
        if self.byzantine:
            self.double_vote(pp)
            return
        self.accept_preprepare(pp)

    def double_vote(self, pp: PrePrepare) -> None:
        """Byzantine backups prepare and commit every digest they see."""
        self.requests[pp.digest] = pp.request
        for kind, cls in (("prepare", Prepare), ("commit", Commit)):
            self.broadcast(kind, cls(pp.view, pp.seq, pp.digest, self.id))

    def on_prepare(self, msg: Prepare) -> None:
        slot = self.slot(msg.view, msg.seq)
        slot.prepares[msg.digest].add(msg.sender)
        self.check_prepared(msg.view, msg.seq, slot)

    def check_prepared(self, view: int, seq: int, slot: Slot) -> None:
        d = slot.preprepare
        if slot.prepared is not None or d is None or self.byzantine:
            return
        if len(slot.prepares[d]) >= self.quorum:
            slot.prepared = d
            cert = QuorumCert(view, seq, d, frozenset(slot.prepares[d]))
            if seq not in self.best_cert or self.best_cert[seq].view < view:
                self.best_cert[seq] = cert
            self.vote("commit", Commit(view, seq, d, self.id))
            self.check_committed(view, seq, slot)

    def on_commit(self, msg: Commit) -> None:
        slot = self.slot(msg.view, msg.seq)
        slot.commits[msg.digest].add(msg.sender)
        self.check_committed(msg.view, msg.seq, slot)

    def check_committed(self, view: int, seq: int, slot: Slot) -> None:
        d = slot.prepared
        if slot.committed or d is None or len(slot.commits[d]) < self.quorum:
            return
        slot.committed = True
        if seq <= self.last_executed:
            if self.executed.get(seq) != d:
                self.counters["conflicting_commit"] += 1
            return
        self.committed_waiting[seq] = d
        self.try_execute()

    def try_execute(self) -> None:
        progressed = False
        while self.last_executed + 1 in self.committed_waiting:
            seq = self.last_executed + 1
            d = self.committed_waiting.pop(seq)
            self.execute(seq, d)
            progressed = True
        if progressed:
            self.timeout = self.base_timeout
            self.deadline = None
            self.arm_timer()

    def execute(self, seq: int, d: Digest) -> None:
        self.executed[seq] = d
        self.last_executed = seq
        self.pending.pop(d, None)
        self.executed_digests.add(d)
        payload = self.requests.get(d, NULL_REQUEST)
        txs = [] if d == NULL_DIGEST else [Transaction.from_payload(payload)]
        block = make_block(self.tip, txs, timestamp=max(self.net.now, self.tip.header.timestamp),
                           proposer=primary_of(self.view, self.n))
        self.store.add(block)
        self.tip = block
        self.head_log.append(block.digest)

    # view change -------------------------------------------------------------------
    def on_tick(self, tick: int) -> None:
        if self.deadline is not None and tick >= self.deadline:
            self.on_timeout()

    def on_timeout(self) -> None:
        self.counters["timeouts"] += 1
        self.timeout *= 2
        self.start_view_change(self.view + 1)

    def start_view_change(self, new_view: int) -> None:
        self.view = new_view
        self.in_view_change = True
        self.deadline = self.net.now + self.timeout
        vc = ViewChange(new_view, self.id, tuple(self.best_cert[s] for s in sorted(self.best_cert)),
                        tuple(sorted((c.digest, self.requests.get(c.digest, NULL_REQUEST))
                                     for c in self.best_cert.values())))
        self.broadcast("viewchange", vc)
        self.on_view_change(vc)

    def on_view_change(self, vc: ViewChange) -> None:
        if vc.new_view < self.view:
            return
        self.view_changes[vc.new_view][vc.sender] = vc
        if vc.new_view > self.view or (vc.new_view == self.view and not self.in_view_change):
            # join once f+1 replicas ask for a view beyond ours
            if vc.new_view > self.view and len(self.view_changes[vc.new_view]) >= self.f + 1:
                self.start_view_change(vc.new_view)
            return
        if (primary_of(vc.new_view, self.n) == self.id and vc.new_view not in self.new_view_sent
                and len(self.view_changes[vc.new_view]) >= self.quorum):
            self.send_new_view(vc.new_view)

    def send_new_view(self, view: int) -> None:
        self.new_view_sent.add(view)
        senders = sorted(self.view_changes[view])[: self.quorum]
        vcs = tuple(self.view_changes[view][s] for s in senders)
        nv = NewView(view, self.id, vcs, new_view_preprepares(view, vcs))
        self.broadcast("newview", nv)
        self.enter_view(nv)

    def on_new_view(self, src: int, nv: NewView) -> None:
        if nv.view < self.view or (nv.view == self.view and not self.in_view_change):
            return
        senders = {vc.sender for vc in nv.view_changes if vc.new_view == nv.view}
        if src != primary_of(nv.view, self.n) or len(senders) < self.quorum:
            self.counters["invalid_newview"] += 1
            return
        if new_view_preprepares(nv.view, nv.view_changes) != nv.preprepares:
            self.counters["invalid_newview"] += 1
            return
        self.enter_view(nv)

    def enter_view(self, nv: NewView) -> None:
        self.view = nv.view
        self.in_view_change = False
        self.deadline = None
        self.counters["view_changes"] += 1
        self.assigned = {}
        for pp in nv.preprepares:
            self.requests.setdefault(pp.digest, pp.request)
            if self.byzantine:
                self.double_vote(pp)
            else:
                self.accept_preprepare(pp)
            self.assigned[pp.digest] = pp.seq
        self.next_seq = max((pp.seq for pp in nv.preprepares), default=self.last_executed) + 1
        self.next_seq = max(self.next_seq, self.last_executed + 1)
        self.arm_timer()
        if self.is_primary():
            for d in sorted(self.pending, key=lambda x: (self.pending[x], x)):
                self.assign(d)
        backlog, self.future = self.future, []
        for env in backlog:
            self.on_message(env)

    # dispatch ----------------------------------------------------------------------
    def message_view(self, env: Envelope) -> int | None:
        if env.kind in ("preprepare", "prepare", "commit"):
            return env.payload.view
        return None

    def on_message(self, env: Envelope) -> None:
        kind = env.kind
        if kind == "forward":
            if self.is_primary():
                self.requests[hash_bytes(env.payload)] = env.payload
                self.assign(hash_bytes(env.payload))
            return
        if kind == "viewchange":
            self.on_view_change(env.payload)
            return
        if kind == "newview":
            self.on_new_view(env.src, env.payload)
            return
        view = self.message_view(env)
        if view is None:
            return
        if view > self.view or (view == self.view and self.in_view_change):
            self.future.append(env)
            return
        if view < self.view:
            self.counters["wrong_view"] += 1
            return
        if kind == "preprepare":
            self.on_preprepare(env.src, env.payload)
        elif kind == "prepare":
            if not self.byzantine:
                self.on_prepare(env.payload)
        elif kind == "commit":
            if not self.byzantine:
                self.on_commit(env.payload)

    def snapshot(self) -> NodeView:
        return NodeView(self.id, self.store, list(self.head_log), [], dict(self.executed))


# -- world -------------------------------------------------------------------------

@dataclass
class PbftParams:
    requests: int = 10
    request_interval: int = 5
    first_request: int = 1
    view_timeout: int = 20
    client_timeout: int = 30
    quorum: int | None = None

    def validate(self, nodes: int, path: str = "engine_params") -> None:
        if nodes < 4:
            raise ConfigError("PBFT needs at least 4 replicas (n = 3f + 1 with f >= 1)", "nodes")
        if not 0 <= self.requests <= WATERMARK_WINDOW:
            raise ConfigError(f"must be in [0, {WATERMARK_WINDOW}]", f"{path}.requests")
        for name in ("request_interval", "view_timeout", "client_timeout"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", f"{path}.{name}")
        if self.first_request < 0:
            raise ConfigError("must be >= 0", f"{path}.first_request")
        if self.quorum is not None and not 1 <= self.quorum <= nodes:
            raise ConfigError(f"must be in [1, {nodes}]", f"{path}.quorum")


@dataclass
class ClientRequest:
    payload: bytes
    digest: Digest
    sent: int
    submitted: int
    retries: int = 0


class PbftWorld:
    """Replicas plus an in-process client that submits requests and retransmits on timeout."""

    engine = "pbft"

    def __init__(self, net: Network, params: PbftParams) -> None:
        self.net = net
        self.params = params
        self.nodes = [Replica(i, net, params.view_timeout, params.quorum) for i in range(net.n)]
        self.f = max_faulty(net.n)
        self.outstanding: list[ClientRequest] = []
        self.submitted = 0
        self.client_messages = 0
        self.latencies: list[int] = []
        self.client_digests: list[Digest] = []
        self.retries = 0

    def honest_nodes(self) -> list[Replica]:
        return [r for r in self.nodes if not self.net.is_byzantine(r.id)]

    def executed_by(self, digest: Digest) -> int:
        return sum(1 for r in self.honest_nodes() if digest in r.executed_digests)

    def known_view(self) -> int:
        return max((r.view for r in self.honest_nodes() if r.executed and not r.in_view_change), default=0)

    def before_tick(self, tick: int) -> None:
        p = self.params
        if self.submitted < p.requests and tick >= p.first_request and \
                (tick - p.first_request) % p.request_interval == 0:
            payload = b"req|%d" % self.submitted
            self.submitted += 1
            req = ClientRequest(payload, hash_bytes(payload), tick, tick)
            self.outstanding.append(req)
            self.client_digests.append(req.digest)
            self.deliver(primary_of(self.known_view(), self.net.n), payload)
        still = []
        for req in self.outstanding:
            if self.executed_by(req.digest) >= self.f + 1:
                self.latencies.append(tick - req.submitted)
                self.retries += req.retries
                continue
            if tick - req.sent >= p.client_timeout:
                req.sent = tick
                req.retries += 1
                for i in range(self.net.n):
                    self.deliver(i, req.payload)
            still.append(req)
        self.outstanding = still

    def deliver(self, replica: int, payload: bytes) -> None:
        self.client_messages += 1
        if not self.net.is_crashed(replica):
            self.nodes[replica].on_request(payload)

    def executed_requests(self) -> int:
        """Client requests executed by at least f + 1 honest replicas (what a client accepts)."""
        return sum(1 for d in self.client_digests if self.executed_by(d) >= self.f + 1)

    def protocol_messages(self) -> int:
        return sum(self.net.sent[k] for k in PROTOCOL_KINDS)

    def metrics(self) -> dict:
        honest = self.honest_nodes()
        totals: Counter[str] = Counter()
        for r in honest:
            totals.update(r.counters)
        executed = self.executed_requests()
        return {
            "executed_requests": executed,
            "submitted_requests": self.submitted,
            "protocol_messages": self.protocol_messages(),
            "messages_per_commit": self.protocol_messages() / executed if executed else None,
            "view_changes": max((r.counters["view_changes"] for r in honest), default=0),
            "max_view": max((r.view for r in honest), default=0),
            "mean_execution_latency": fmean(self.latencies) if self.latencies else None,
            "client_retransmissions": self.retries + sum(r.retries for r in self.outstanding),
            "client_messages": self.client_messages,
            "outstanding_requests": len(self.outstanding),
            "conflicting_preprepares": totals["conflicting_preprepare"],
            "wrong_view_messages": totals["wrong_view"],
        }


def message_complexity(world: PbftWorld) -> float | None:
    """Protocol messages sent per executed request."""
    executed = world.executed_requests()
    return world.protocol_messages() / executed if executed else None
