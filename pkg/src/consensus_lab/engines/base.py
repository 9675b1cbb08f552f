"""Block gossip, orphan handling and head tracking shared by the chain engines."""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

from ..chain import (Block, BlockFault, ChainStore, Digest, Transaction, ValidationRules,
                     make_block, validate_block)
from ..netsim import Envelope, Network, SimNode


def block_body(proposer: int, height: int, tick: int, extra: int = 0, tag: bytes = b"") -> list[Transaction]:
    """Coinbase plus ``extra`` synthetic transactions; payloads are unique per (proposer, height, tick)."""
    stem = b"%d|%d|%d" % (proposer, height, tick) + tag
    txs = [Transaction.from_payload(b"cb|" + stem)]
    txs.extend(Transaction.from_payload(b"tx|%s|%d" % (stem, i)) for i in range(extra))
    return txs


@dataclass
class NodeView:
    """What the engine-independent checker reads from an honest node after a run."""

    node: int
    store: ChainStore
    head_log: list[Digest]
    finalized_log: list[Digest] = field(default_factory=list)
    executed: dict[int, Digest] | None = None
    finalized_at: list[int] = field(default_factory=list)


class ChainNode(SimNode):
    rules = ValidationRules()

    def __init__(self, node_id: int, net: Network, genesis: Block, txs_per_block: int = 0) -> None:
        super().__init__(node_id, net)
        self.store = ChainStore(genesis)
        self.txs_per_block = txs_per_block
        self.head: Digest = genesis.digest
        self.head_log: list[Digest] = [genesis.digest]
        self.finalized_log: list[Digest] = []
        self.finalized_at: list[int] = []
        self.orphans: dict[Digest, list[Block]] = defaultdict(list)
        self.requested: set[Digest] = set()
        self.rejected: Counter[str] = Counter()

    # -- hooks -------------------------------------------------------------
    def check_block(self, block: Block, parent: Block) -> BlockFault | None:
        """Engine-specific rules applied after the generic ones."""
        return None

    def on_block_stored(self, block: Block) -> None:
        pass

    # -- chain handling ----------------------------------------------------
    def validate(self, block: Block, parent: Block) -> BlockFault | None:
        fault = validate_block(block, parent, self.rules)
        if fault is None:
            fault = self.check_block(block, parent)
        return fault

    def update_head(self) -> None:
        tip = self.store.fork_choice()
        if tip != self.head:
            self.head = tip
            self.head_log.append(tip)

    def head_block(self) -> Block:
        return self.store[self.head]

    def new_block(self, parent: Block, tick: int, difficulty_bits: int = 0, tag: bytes = b"") -> Block:
        txs = block_body(self.id, parent.height + 1, tick, self.txs_per_block, tag)
        return make_block(parent, txs, timestamp=tick, proposer=self.id, difficulty_bits=difficulty_bits)

    def accept_own(self, block: Block, announce: bool = True) -> None:
        self.store.add(block)
        self.on_block_stored(block)
        self.update_head()
        if announce:
            self.broadcast("block", block)

    def receive_block(self, block: Block, sender: int) -> None:
        d = block.digest
        if d in self.store:
            return
        if block.parent not in self.store:
            pending = self.orphans[block.parent]
            if all(b.digest != d for b in pending):
                pending.append(block)
            if block.parent not in self.requested:
                self.requested.add(block.parent)
                self.send(sender, "getblock", block.parent)
            return
        work = [block]
        while work:
            b = work.pop()
            fault = self.validate(b, self.store[b.parent])
            if fault is not None:
                self.rejected[fault.value] += 1
                self.orphans.pop(b.digest, None)
                continue
            self.store.add(b)
            self.requested.discard(b.digest)
            self.on_block_stored(b)
            work.extend(reversed(self.orphans.pop(b.digest, [])))
        self.update_head()

    def on_message(self, env: Envelope) -> None:
        if env.kind == "block":
            self.receive_block(env.payload, env.src)
        elif env.kind == "getblock":
            if env.payload in self.store:
                self.send(env.src, "block", self.store[env.payload])
        else:
            self.on_protocol_message(env)

    def on_protocol_message(self, env: Envelope) -> None:
        pass

    def finalize(self, digest: Digest) -> bool:
        """Move local finality to ``digest`` if it extends the current finalized block."""
        if digest not in self.store or not self.store.is_ancestor(self.store.finalized, digest):
            return False
        if digest == self.store.finalized:
            return False
        self.store.set_finalized(digest)
        self.finalized_log.append(digest)
        self.finalized_at.append(self.net.now)
        self.update_head()
        return True

    def snapshot(self) -> NodeView:
        return NodeView(self.id, self.store, list(self.head_log), list(self.finalized_log),
                        finalized_at=list(self.finalized_at))
