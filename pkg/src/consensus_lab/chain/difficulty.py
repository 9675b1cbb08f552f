from __future__ import annotations

import math
from typing import Sequence

from .block import BlockHeader

MAX_ADJUST = 4.0
INITIAL_SUBSIDY = 50.0
HALVING_INTERVAL = 210_000


def adjust_difficulty(window: Sequence[BlockHeader], target_spacing: int, retarget_interval: int) -> int:
    """Difficulty bits for the block after ``window``.

    The speed-up ratio (expected span / actual span) is clamped to [1/4, 4]
    and converted to a whole number of bits with ``floor(log2(ratio) + 0.5)``,
    so one call moves difficulty by at most two bits.
    """
    if retarget_interval < 2 or len(window) != retarget_interval:
        raise ValueError(f"window must hold exactly retarget_interval={retarget_interval} (>= 2) headers")
    if target_spacing < 1:
        raise ValueError("target_spacing must be positive")
    for prev, cur in zip(window, window[1:]):
        if cur.height != prev.height + 1 or cur.parent != prev.digest:
            raise ValueError(f"window is not contiguous at height {cur.height}")
    bits = window[-1].difficulty_bits
    expected = target_spacing * (len(window) - 1)
    actual = window[-1].timestamp - window[0].timestamp
    ratio = MAX_ADJUST if actual <= 0 else min(MAX_ADJUST, max(1 / MAX_ADJUST, expected / actual))
    return max(0, bits + math.floor(math.log2(ratio) + 0.5))


def block_subsidy(height: int, initial: float = INITIAL_SUBSIDY, halving_interval: int = HALVING_INTERVAL) -> float:
    halvings = height // halving_interval
    return 0.0 if halvings >= 64 else initial / (1 << halvings)
