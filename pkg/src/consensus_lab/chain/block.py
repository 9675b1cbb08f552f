"""Blocks, headers and transactions.

Header byte layout (big-endian, 100 bytes, hashed as-is)::

    parent:32 | merkle_root:32 | height:8 | timestamp:8 | difficulty_bits:4 | nonce:8 | proposer:8
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable

from .hashing import DIGEST_SIZE, ZERO_DIGEST, Digest, hash_bytes

HEADER_FORMAT = struct.Struct(">32s32sQQIQQ")
HEADER_SIZE = HEADER_FORMAT.size
# parent..difficulty_bits; the nonce search hashes this prefix once.
HEADER_PREFIX_SIZE = 32 + 32 + 8 + 8 + 4

U64_MAX = (1 << 64) - 1
U32_MAX = (1 << 32) - 1


@dataclass(frozen=True)
class BlockHeader:
    parent: Digest
    merkle_root: Digest
    height: int
    timestamp: int
    difficulty_bits: int
    nonce: int
    proposer: int

    def __post_init__(self) -> None:
        if len(self.parent) != DIGEST_SIZE or len(self.merkle_root) != DIGEST_SIZE:
            raise ValueError("parent and merkle_root must be 32-byte digests")
        for name, limit in (("height", U64_MAX), ("timestamp", U64_MAX),
                            ("difficulty_bits", U32_MAX), ("nonce", U64_MAX),
                            ("proposer", U64_MAX)):
            value = getattr(self, name)
            if not 0 <= value <= limit:
                raise ValueError(f"{name}={value} out of range")

    def serialize(self) -> bytes:
        return HEADER_FORMAT.pack(self.parent, self.merkle_root, self.height,
                                  self.timestamp, self.difficulty_bits,
                                  self.nonce, self.proposer)

    @classmethod
    def deserialize(cls, data: bytes) -> "BlockHeader":
        if len(data) != HEADER_SIZE:
            raise ValueError(f"header must be {HEADER_SIZE} bytes, got {len(data)}")
        return cls(*HEADER_FORMAT.unpack(data))

    @cached_property
    def digest(self) -> Digest:
        return hash_bytes(self.serialize())

    def with_nonce(self, nonce: int) -> "BlockHeader":
        return replace(self, nonce=nonce)


def hash_header(header: BlockHeader) -> Digest:
    return header.digest


@dataclass(frozen=True)
class Transaction:
    id: Digest
    payload: bytes

    @classmethod
    def from_payload(cls, payload: bytes) -> "Transaction":
        return cls(hash_bytes(payload), bytes(payload))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...] = field(default_factory=tuple)

    @property
    def digest(self) -> Digest:
        return self.header.digest

    @property
    def height(self) -> int:
        return self.header.height

    @property
    def parent(self) -> Digest:
        return self.header.parent

    def to_dict(self) -> dict[str, Any]:
        h = self.header
        return {
            "hash": h.digest.hex(),
            "parent": h.parent.hex(),
            "merkle_root": h.merkle_root.hex(),
            "height": h.height,
            "timestamp": h.timestamp,
            "difficulty_bits": h.difficulty_bits,
            "nonce": h.nonce,
            "proposer": h.proposer,
            "transactions": [tx.payload.hex() for tx in self.transactions],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Block":
        header = BlockHeader(
            parent=bytes.fromhex(data["parent"]),
            merkle_root=bytes.fromhex(data["merkle_root"]),
            height=int(data["height"]),
            timestamp=int(data["timestamp"]),
            difficulty_bits=int(data["difficulty_bits"]),
            nonce=int(data["nonce"]),
            proposer=int(data["proposer"]),
        )
        txs = tuple(Transaction.from_payload(bytes.fromhex(p)) for p in data["transactions"])
        return cls(header, txs)


def make_block(parent: Block | None, transactions: Iterable[Transaction], *,
               timestamp: int, proposer: int, difficulty_bits: int = 0,
               nonce: int = 0) -> Block:
    """Unsealed block extending ``parent`` (or a genesis block when None)."""
    from .merkle import build_merkle_root

    txs = tuple(transactions)
    header = BlockHeader(
        parent=parent.digest if parent is not None else ZERO_DIGEST,
        merkle_root=build_merkle_root(txs),
        height=parent.height + 1 if parent is not None else 0,
        timestamp=timestamp,
        difficulty_bits=difficulty_bits,
        nonce=nonce,
        proposer=proposer,
    )
    return Block(header, txs)


def genesis_block(difficulty_bits: int = 0) -> Block:
    return make_block(None, (), timestamp=0, proposer=0, difficulty_bits=difficulty_bits)
