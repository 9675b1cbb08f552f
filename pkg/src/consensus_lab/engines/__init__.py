"""Consensus engines and the registry the scenario runner dispatches on."""
from __future__ import annotations

from .authority import DposParams, DposWorld, PoaParams, PoaWorld
from .base import ChainNode, NodeView
from .hybrid import HybridParams, HybridWorld
from .pbft import PbftParams, PbftWorld
from .pow import PowParams, PowWorld
from .stake import PosParams, PosWorld

# engine name -> (parameter dataclass, world class)
ENGINES = {
    "pow": (PowParams, PowWorld),
    "pos": (PosParams, PosWorld),
    "poa": (PoaParams, PoaWorld),
    "hybrid": (HybridParams, HybridWorld),
    "pbft": (PbftParams, PbftWorld),
    "dpos": (DposParams, DposWorld),
}

__all__ = [
    "ENGINES", "ChainNode", "NodeView",
    "DposParams", "DposWorld", "HybridParams", "HybridWorld", "PbftParams", "PbftWorld",
    "PoaParams", "PoaWorld", "PosParams", "PosWorld", "PowParams", "PowWorld",
]
