"""Block tree with longest-chain fork choice constrained by finality."""
from __future__ import annotations

from itertools import count

from .block import Block
from .hashing import Digest


class ChainStore:
    """All blocks a node knows about, rooted at genesis.

    Fork choice picks the highest block descending from ``finalized``; among
    equal heights the one stored first wins. The best tip is maintained
    incrementally, so :meth:`fork_choice` is O(1) between finality moves.
    """

    def __init__(self, genesis: Block) -> None:
        if genesis.height != 0:
            raise ValueError("genesis must have height 0")
        self.genesis = genesis.digest
        self.blocks: dict[Digest, Block] = {genesis.digest: genesis}
        self.children: dict[Digest, list[Digest]] = {genesis.digest: []}
        self.tips: set[Digest] = {genesis.digest}
        self.finalized: Digest = genesis.digest
        self.arrival: dict[Digest, int] = {genesis.digest: 0}
        self._seq = count(1)
        self._best = genesis.digest

    def __contains__(self, digest: Digest) -> bool:
        return digest in self.blocks

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, digest: Digest) -> Block:
        return self.blocks[digest]

    def height(self, digest: Digest) -> int:
        return self.blocks[digest].height

    def add(self, block: Block) -> bool:
        """Store ``block``. Returns False if it was already present."""
        d = block.digest
        if d in self.blocks:
            return False
        if block.parent not in self.blocks:
            raise ValueError(f"parent {block.parent.hex()[:12]} of block {d.hex()[:12]} is not stored")
        self.blocks[d] = block
        self.children[d] = []
        self.children[block.parent].append(d)
        self.tips.discard(block.parent)
        self.tips.add(d)
        self.arrival[d] = next(self._seq)
        if block.height > self.blocks[self._best].height and (
                block.parent == self._best or self.is_ancestor(self.finalized, d)):
            self._best = d
        return True

    def ancestor_at(self, digest: Digest, height: int) -> Digest:
        block = self.blocks[digest]
        if height > block.height or height < 0:
            raise ValueError(f"no ancestor at height {height} for block at {block.height}")
        while block.height > height:
            block = self.blocks[block.parent]
        return block.digest

    def is_ancestor(self, ancestor: Digest, digest: Digest) -> bool:
        """True if ``ancestor`` is ``digest`` or lies on its path to genesis."""
        h = self.blocks[ancestor].height
        if h > self.blocks[digest].height:
            return False
        return self.ancestor_at(digest, h) == ancestor

    def common_ancestor(self, a: Digest, b: Digest) -> Digest:
        ba, bb = self.blocks[a], self.blocks[b]
        while ba.height > bb.height:
            ba = self.blocks[ba.parent]
        while bb.height > ba.height:
            bb = self.blocks[bb.parent]
        while ba.digest != bb.digest:
            ba = self.blocks[ba.parent]
            bb = self.blocks[bb.parent]
        return ba.digest

    def conflicts_with_finalized(self, digest: Digest) -> bool:
        return not (self.is_ancestor(self.finalized, digest) or self.is_ancestor(digest, self.finalized))

    def set_finalized(self, digest: Digest) -> None:
        if not self.is_ancestor(self.finalized, digest):
            raise ValueError("new finalized block must descend from the current one")
        self.finalized = digest
        if not self.is_ancestor(digest, self._best):
            self._best = self._rescan()

    def _rescan(self) -> Digest:
        best = self.finalized
        stack = [self.finalized]
        while stack:
            d = stack.pop()
            b = self.blocks[d]
            top = self.blocks[best]
            if b.height > top.height or (b.height == top.height and self.arrival[d] < self.arrival[best]):
                best = d
            stack.extend(self.children[d])
        return best

    def fork_choice(self) -> Digest:
        return self._best

    def chain(self, tip: Digest | None = None) -> list[Block]:
        """Blocks from genesis to ``tip`` (default: the fork-choice tip)."""
        d = self.fork_choice() if tip is None else tip
        out = []
        while True:
            block = self.blocks[d]
            out.append(block)
            if block.height == 0:
                break
            d = block.parent
        out.reverse()
        return out


def fork_choice(store: ChainStore) -> Digest:
    return store.fork_choice()


def confirmations(store: ChainStore, digest: Digest) -> int:
    if digest not in store:
        raise ValueError(f"unknown block {digest.hex()[:12]}")
    tip = store.fork_choice()
    if not store.is_ancestor(digest, tip):
        return 0
    return store.height(tip) - store.height(digest) + 1


def is_settled(store: ChainStore, digest: Digest, k: int = 6) -> bool:
    return confirmations(store, digest) >= k
