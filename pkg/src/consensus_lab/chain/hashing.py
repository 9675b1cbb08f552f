"""The one hash function every digest in the system comes from."""
from __future__ import annotations

import hashlib
from contextlib import contextmanager

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)

Digest = bytes

_hash_name = "sha256"


def set_hash_function(name: str) -> None:
    """Select a hashlib algorithm by name; it must produce 32-byte digests."""
    global _hash_name
    try:
        size = hashlib.new(name).digest_size
    except ValueError as exc:
        raise ValueError(f"unknown hash function {name!r}") from exc
    if size != DIGEST_SIZE:
        raise ValueError(f"{name} produces {size}-byte digests, need {DIGEST_SIZE}")
    _hash_name = name


def hash_function_name() -> str:
    return _hash_name


@contextmanager
def using_hash(name: str):
    previous = _hash_name
    set_hash_function(name)
    try:
        yield
    finally:
        set_hash_function(previous)


def hasher(data: bytes = b""):
    h = hashlib.new(_hash_name)
    if data:
        h.update(data)
    return h


def hash_bytes(data: bytes) -> Digest:
    return hashlib.new(_hash_name, data).digest()


def leading_zero_bits(digest: Digest) -> int:
    return DIGEST_SIZE * 8 - int.from_bytes(digest, "big").bit_length()


def meets_difficulty(digest: Digest, bits: int) -> bool:
    if bits <= 0:
        return True
    return int.from_bytes(digest, "big") >> (DIGEST_SIZE * 8 - bits) == 0
