from __future__ import annotations

import enum
from dataclasses import dataclass

from .block import Block
from .hashing import meets_difficulty
from .merkle import build_merkle_root


class BlockFault(str, enum.Enum):
    """Why a block failed validation. Checked in declaration order."""

    PARENT_MISMATCH = "ParentMismatch"
    HEIGHT_GAP = "HeightGap"
    MERKLE_MISMATCH = "MerkleMismatch"
    TIMESTAMP_REGRESSION = "TimestampRegression"
    INSUFFICIENT_WORK = "InsufficientWork"
    DUPLICATE_TRANSACTION = "DuplicateTransaction"
    # engine-level rules layered on top of validate_block
    DIFFICULTY_MISMATCH = "DifficultyMismatch"
    UNAUTHORIZED_SEALER = "UnauthorizedSealer"
    SLOT_REGRESSION = "SlotRegression"
    CONFLICTS_FINALIZED = "ConflictsFinalized"
    BAD_GENESIS = "BadGenesis"


@dataclass(frozen=True)
class ValidationRules:
    require_pow: bool = False


def validate_block(block: Block, parent: Block, rules: ValidationRules = ValidationRules()) -> BlockFault | None:
    """Check ``block`` against its parent. Returns None when valid."""
    h = block.header
    if h.parent != parent.digest:
        return BlockFault.PARENT_MISMATCH
    if h.height != parent.height + 1:
        return BlockFault.HEIGHT_GAP
    if h.merkle_root != build_merkle_root(block.transactions):
        return BlockFault.MERKLE_MISMATCH
    if len({tx.id for tx in block.transactions}) != len(block.transactions):
        return BlockFault.DUPLICATE_TRANSACTION
    if h.timestamp < parent.header.timestamp:
        return BlockFault.TIMESTAMP_REGRESSION
    if rules.require_pow and not meets_difficulty(h.digest, h.difficulty_bits):
        return BlockFault.INSUFFICIENT_WORK
    return None


def validate_genesis(block: Block) -> BlockFault | None:
    h = block.header
    if h.parent != bytes(32):
        return BlockFault.PARENT_MISMATCH
    if h.height != 0:
        return BlockFault.HEIGHT_GAP
    if block.transactions or h.merkle_root != build_merkle_root(()):
        return BlockFault.MERKLE_MISMATCH
    return None
