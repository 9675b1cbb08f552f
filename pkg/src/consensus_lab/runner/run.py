"""Build a world from a config, run it, and reduce the final state to a metrics report."""
from __future__ import annotations

import csv
import io
import json
import logging
from statistics import fmean
from typing import Any

from ..engines import ENGINES
from ..engines.base import NodeView
from ..netsim import Network, run_loop
from .config import ScenarioConfig
from .safety import SETTLED_DEPTH, check_safety

log = logging.getLogger(__name__)

CHAIN_FINALITY = ("pos", "hybrid")
SLOT_ENGINES = ("poa", "dpos")
STAKE_ENGINES = ("pos", "hybrid")


def build_world(cfg: ScenarioConfig, trace: bool = False) -> Any:
    net = Network(cfg.nodes, cfg.seed, cfg.latency, cfg.faults, trace=trace)
    _, world_cls = ENGINES[cfg.engine]
    return world_cls(net, cfg.engine_params)


def simulate(cfg: ScenarioConfig, trace: bool = False) -> Any:
    world = build_world(cfg, trace)
    run_loop(world.net, world.nodes, cfg.duration, getattr(world, "before_tick", None))
    return world


def settlement_latency(view: NodeView, depth: int = SETTLED_DEPTH) -> float | None:
    """Mean ticks from a canonical block's timestamp to the block that buries it ``depth`` deep."""
    chain = view.store.chain(view.head_log[-1])
    gaps = [chain[i + depth - 1].header.timestamp - chain[i].header.timestamp
            for i in range(1, len(chain) - depth + 1)]
    return fmean(gaps) if gaps else None


def finality_latency(views: list[NodeView]) -> float | None:
    gaps = [at - v.store[d].header.timestamp
            for v in views for d, at in zip(v.finalized_log, v.finalized_at)]
    return fmean(gaps) if gaps else None


def observer_node(world: Any) -> Any:
    """The first honest node still running at the end, else the first honest node at all."""
    honest = world.honest_nodes() or world.nodes
    live = [n for n in honest if not world.net.is_crashed(n.id)]
    return (live or honest)[0]


def _round(x: float | None) -> float | None:
    return None if x is None else round(x, 6)


def report(cfg: ScenarioConfig, world: Any) -> dict[str, Any]:
    net = world.net
    honest = world.honest_nodes()
    views = [n.snapshot() for n in honest]
    safety = check_safety(views)
    observer = observer_node(world).snapshot()
    engine_metrics = world.metrics()
    committed = observer.store.height(observer.head_log[-1])
    txs = sum(len(b.transactions) for b in observer.store.chain(observer.head_log[-1])[1:])
    messages = sum(net.sent.values())
    out: dict[str, Any] = {
        "name": cfg.name,
        "engine": cfg.engine,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash,
        "nodes": cfg.nodes,
        "duration": cfg.duration,
        "committed_blocks": committed,
        "committed_transactions": txs,
        "fork_events": safety.fork_events,
        "reorgs": safety.reorgs,
        "reorg_depth_max": safety.reorg_depth_max,
        "settled_reorgs": safety.settled_reorgs,
        "finality_violations": safety.finality_violations + safety.execution_conflicts,
        "safety_violations": safety.violations(cfg.engine),
        "messages_total": messages,
        "messages_by_kind": dict(sorted(net.sent.items())),
        "messages_dropped": sum(net.dropped.values()),
        "rejected_blocks": engine_metrics.pop("rejected_blocks", 0),
    }
    if cfg.engine == "pbft":
        executed = engine_metrics.pop("executed_requests")
        protocol = engine_metrics.pop("protocol_messages")
        out["executed_requests"] = executed
        out["throughput"] = _round(executed / cfg.duration)
        out["messages_per_commit"] = _round(protocol / executed) if executed else None
        out["mean_finality_latency"] = _round(engine_metrics.pop("mean_execution_latency"))
        engine_metrics.pop("messages_per_commit", None)
    else:
        out["throughput"] = _round(committed / cfg.duration)
        out["tx_throughput"] = _round(txs / cfg.duration)
        out["messages_per_commit"] = _round(messages / committed) if committed else None
        if cfg.engine in CHAIN_FINALITY:
            out["mean_finality_latency"] = _round(finality_latency(views))
            out["finalized_height"] = observer.store.height(observer.store.finalized)
        else:
            out["mean_finality_latency"] = _round(settlement_latency(observer))
    if cfg.engine in SLOT_ENGINES:
        out["missed_slots"] = engine_metrics.pop("missed_slots")
    if cfg.engine in STAKE_ENGINES:
        out["slashing_events"] = engine_metrics.pop("slashing_events")
        out["invalid_votes"] = engine_metrics.pop("invalid_votes")
    out["engine_metrics"] = engine_metrics
    return out


def run_scenario(cfg: ScenarioConfig, trace: bool = False) -> tuple[dict[str, Any], Any]:
    """Run ``cfg`` to completion; returns the report and the finished world."""
    world = simulate(cfg, trace)
    return report(cfg, world), world


def report_json(rep: dict[str, Any]) -> str:
    return json.dumps(rep, sort_keys=True, indent=2) + "\n"


SUMMARY_FIELDS = ("name", "engine", "seed", "committed_blocks", "executed_requests", "throughput",
                  "mean_finality_latency", "fork_events", "reorg_depth_max", "messages_total",
                  "messages_per_commit", "safety_violations", "missed_slots", "slashing_events",
                  "invalid_votes", "config_hash")


def summary_csv(reports: list[dict[str, Any]], fields: tuple[str, ...] = SUMMARY_FIELDS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for rep in reports:
        writer.writerow(["" if rep.get(f) is None else rep.get(f) for f in fields])
    return buf.getvalue()
