"""Serialized canonical chains and their independent revalidation."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from ..chain import (Block, BlockFault, ValidationRules, build_merkle_root, hash_header, validate_block)
from ..chain.hashing import ZERO_DIGEST
from ..engines import ENGINES
from ..engines.authority import GovernanceState, parse_governance, poa_sealer
from ..engines.pow import required_difficulty
from ..engines.stake import proposer_for_slot, registry_after
from ..errors import ConfigError, NoEligibleValidators
from .config import build_dataclass
from .run import observer_node

DUMP_FORMAT = "consensus-lab-chain/1"
POW_ENGINES = ("pow", "hybrid")


class DumpError(ValueError):
    """The dump cannot be parsed at all."""


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    blocks: int
    index: int | None = None
    hash: str | None = None
    reason: str = ""

    def describe(self) -> str:
        if self.ok:
            return f"ok: {self.blocks} blocks verified"
        return f"FAIL at block {self.index} ({self.hash}): {self.reason}"


def dump_chain(cfg: Any, world: Any) -> dict[str, Any]:
    """The canonical chain of the first live honest node, with the rules needed to recheck it."""
    node = observer_node(world)
    view = node.snapshot()
    head = view.head_log[-1]
    return {
        "format": DUMP_FORMAT,
        "engine": cfg.engine,
        "node": node.id,
        "rules": {"nodes": cfg.nodes, "seed": cfg.seed, "engine_params": cfg.raw.get("engine_params", {})},
        "head": head.hex(),
        "blocks": [b.to_dict() for b in view.store.chain(head)],
    }


def write_dump(path: str | Path, dump: dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(dump, indent=1, sort_keys=True) + "\n")


def load_dump(path: str | Path) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DumpError(f"cannot parse dump: {exc}") from None
    if not isinstance(data, dict) or data.get("format") != DUMP_FORMAT:
        raise DumpError("not a chain dump (missing or unknown format tag)")
    for key in ("engine", "rules", "head", "blocks"):
        if key not in data:
            raise DumpError(f"dump is missing {key!r}")
    if not isinstance(data["blocks"], list) or not data["blocks"]:
        raise DumpError("dump has no blocks")
    if data["engine"] not in ENGINES:
        raise DumpError(f"unknown engine {data['engine']!r}")
    return data


ScheduleCheck = Callable[[Block, Block], str | None]


def schedule_checker(engine: str, rules: dict[str, Any]) -> ScheduleCheck | None:
    """Per-engine proposer legality, rebuilt from the dumped rules alone."""
    nodes, seed = int(rules["nodes"]), int(rules["seed"])
    params_cls, _ = ENGINES[engine]
    params = build_dataclass(params_cls, rules.get("engine_params", {}), "engine_params")

    if engine in POW_ENGINES:
        seen: dict[bytes, Block] = {}

        def check_pow(block: Block, parent: Block) -> str | None:
            seen[parent.digest] = parent
            want = required_difficulty(parent, lambda d: seen[d], params)
            if block.header.difficulty_bits != want:
                return f"{BlockFault.DIFFICULTY_MISMATCH.value}: expected {want} bits"
            return None
        return check_pow

    if engine in ("pos", "poa", "dpos"):
        slot_ticks = params.slot_ticks

        def slot_of(block: Block) -> int:
            return block.header.timestamp // slot_ticks

        def slot_fault(block: Block, parent: Block) -> str | None:
            if block.header.timestamp % slot_ticks or slot_of(block) <= slot_of(parent):
                return BlockFault.SLOT_REGRESSION.value
            return None

    if engine == "pos":
        state = {"reg": params.registry(nodes)}

        def check_pos(block: Block, parent: Block) -> str | None:
            fault = slot_fault(block, parent)
            if fault:
                return fault
            try:
                want = proposer_for_slot(state["reg"], seed, slot_of(block))
            except NoEligibleValidators:
                return f"{BlockFault.UNAUTHORIZED_SEALER.value}: no eligible validator"
            if block.header.proposer != want:
                return f"{BlockFault.UNAUTHORIZED_SEALER.value}: slot owner is {want}"
            state["reg"] = registry_after(state["reg"], block, params.slash_fraction)
            return None
        return check_pos

    if engine == "poa":
        gov = {"state": GovernanceState(params.authority_set(nodes))}

        def check_poa(block: Block, parent: Block) -> str | None:
            fault = slot_fault(block, parent)
            if fault:
                return fault
            st = gov["state"].advance_to(slot_of(block))
            want = poa_sealer(st.aset, slot_of(block))
            if block.header.proposer != want:
                return f"{BlockFault.UNAUTHORIZED_SEALER.value}: slot owner is {want}"
            for tx in block.transactions:
                change = parse_governance(tx)
                if change is not None:
                    st = st.with_vote(block.header.proposer, *change)
            gov["state"] = st
            return None
        return check_poa

    if engine == "dpos":
        def check_dpos(block: Block, parent: Block) -> str | None:
            fault = slot_fault(block, parent)
            if fault:
                return fault
            slot = slot_of(block)
            want = params.schedule_at(slot * slot_ticks, nodes).producer(slot)
            if block.header.proposer != want:
                return f"{BlockFault.UNAUTHORIZED_SEALER.value}: slot owner is {want}"
            return None
        return check_dpos

    # PBFT blocks are ordered by the replicated log; proposer identity is not chain-checkable.
    return None


def verify_dump(data: dict[str, Any]) -> VerifyResult:
    engine = data["engine"]
    try:
        check = schedule_checker(engine, data["rules"])
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        raise DumpError(f"bad rules section: {exc}") from None
    rules = ValidationRules(require_pow=engine in POW_ENGINES)
    prev: Block | None = None
    raw_blocks = data["blocks"]
    for i, raw in enumerate(raw_blocks):
        stated = raw.get("hash") if isinstance(raw, dict) else None
        try:
            block = Block.from_dict(raw)
        except (KeyError, TypeError, ValueError) as exc:
            return VerifyResult(False, i, i, stated, f"malformed block: {exc}")
        if hash_header(block.header).hex() != stated:
            return VerifyResult(False, i, i, stated, "stored hash does not match header")
        if block.header.merkle_root != build_merkle_root(block.transactions):
            return VerifyResult(False, i, i, stated, BlockFault.MERKLE_MISMATCH.value)
        if prev is None:
            if block.height != 0 or block.parent != ZERO_DIGEST:
                return VerifyResult(False, i, i, stated, BlockFault.BAD_GENESIS.value)
        else:
            fault = validate_block(block, prev, rules)
            if fault is not None:
                return VerifyResult(False, i, i, stated, fault.value)
            reason = check(block, prev) if check is not None else None
            if reason:
                return VerifyResult(False, i, i, stated, reason)
        prev = block
    if prev.digest.hex() != data["head"]:
        return VerifyResult(False, len(raw_blocks), len(raw_blocks) - 1, data["head"],
                            "head does not match the last block")
    return VerifyResult(True, len(raw_blocks))


def verify_chain(path: str | Path) -> VerifyResult:
    """Revalidate a dump file; the result names the first failing block."""
    return verify_dump(load_dump(path))
