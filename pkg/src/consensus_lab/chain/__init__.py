"""Shared chain primitives: blocks, Merkle trees, validation, fork choice, difficulty."""
from .block import (HEADER_SIZE, Block, BlockHeader, Transaction, genesis_block, hash_header,
                    make_block)
from .difficulty import adjust_difficulty, block_subsidy
from .hashing import (ZERO_DIGEST, Digest, hash_bytes, leading_zero_bits, meets_difficulty,
                      set_hash_function, using_hash)
from .merkle import (MerkleProof, Side, build_merkle_root, make_merkle_proof,
                     verify_merkle_proof)
from .store import ChainStore, confirmations, fork_choice, is_settled
from .validation import BlockFault, ValidationRules, validate_block, validate_genesis

__all__ = [
    "HEADER_SIZE", "Block", "BlockHeader", "Transaction", "genesis_block", "hash_header",
    "make_block", "adjust_difficulty", "block_subsidy", "ZERO_DIGEST", "Digest", "hash_bytes",
    "leading_zero_bits", "meets_difficulty", "set_hash_function", "using_hash", "MerkleProof",
    "Side", "build_merkle_root", "make_merkle_proof", "verify_merkle_proof", "ChainStore",
    "confirmations", "fork_choice", "is_settled", "BlockFault", "ValidationRules",
    "validate_block", "validate_genesis",
]
