"""Merkle roots and membership proofs.

Leaves are transaction ids (the hash of each payload); a parent is
``H(left || right)``. Odd levels duplicate their last node. The empty list maps
to ``H(b"")`` and a single transaction's root is its id.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from .block import Transaction
from .hashing import DIGEST_SIZE, Digest, hash_bytes


class Side(str, enum.Enum):
    LEFT = "L"
    RIGHT = "R"


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    siblings: tuple[tuple[Digest, Side], ...]


def merkle_parent(left: Digest, right: Digest) -> Digest:
    return hash_bytes(left + right)


def _levels(leaves: Sequence[Digest]) -> list[list[Digest]]:
    levels = [list(leaves)]
    while len(levels[-1]) > 1:
        level = levels[-1]
        if len(level) % 2:
            level = level + [level[-1]]
        levels.append([merkle_parent(level[i], level[i + 1]) for i in range(0, len(level), 2)])
    return levels


def merkle_root_of_leaves(leaves: Sequence[Digest]) -> Digest:
    if not leaves:
        return hash_bytes(b"")
    return _levels(leaves)[-1][0]


def build_merkle_root(txs: Sequence[Transaction]) -> Digest:
    return merkle_root_of_leaves([tx.id for tx in txs])


def make_merkle_proof(txs: Sequence[Transaction], index: int) -> MerkleProof:
    if not 0 <= index < len(txs):
        raise IndexError(f"leaf index {index} out of range for {len(txs)} transactions")
    siblings = []
    position = index
    for level in _levels([tx.id for tx in txs])[:-1]:
        if position % 2:
            siblings.append((level[position - 1], Side.LEFT))
        else:
            # the duplicated last node pairs with itself
            partner = level[position + 1] if position + 1 < len(level) else level[position]
            siblings.append((partner, Side.RIGHT))
        position //= 2
    return MerkleProof(index, tuple(siblings))


def verify_merkle_proof(leaf: Transaction, proof: MerkleProof, root: Digest) -> bool:
    try:
        node = hash_bytes(leaf.payload)
        for sibling, side in proof.siblings:
            if len(sibling) != DIGEST_SIZE:
                return False
            if side == Side.LEFT:
                node = merkle_parent(sibling, node)
            elif side == Side.RIGHT:
                node = merkle_parent(node, sibling)
            else:
                return False
        return node == root
    except (TypeError, ValueError):
        return False
