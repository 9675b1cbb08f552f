"""Side-by-side metrics for several scenarios."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .config import ScenarioConfig, load_config
from .run import run_scenario

COMPARE_METRICS = (
    "engine", "nodes", "duration", "committed_blocks", "executed_requests", "throughput",
    "tx_throughput", "mean_finality_latency", "fork_events", "reorgs", "reorg_depth_max",
    "messages_total", "messages_per_commit", "safety_violations", "missed_slots",
    "slashing_events", "invalid_votes", "rejected_blocks",
)


@dataclass
class Comparison:
    names: list[str]
    rows: list[tuple[str, list[Any]]]
    warnings: list[str] = field(default_factory=list)

    def text(self) -> str:
        cells = [["metric"] + self.names]
        cells += [[metric] + ["" if v is None else _fmt(v) for v in values] for metric, values in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(cells[0]))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))).rstrip()
                 for row in cells]
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric"] + self.names)
        for metric, values in self.rows:
            writer.writerow([metric] + ["" if v is None else v for v in values])
        return buf.getvalue()


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def tabulate(reports: Sequence[dict[str, Any]]) -> Comparison:
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    names = [r.get("name") or f"run{i}" for i, r in enumerate(reports)]
    rows, warnings = [], []
    for metric in COMPARE_METRICS:
        values = [r.get(metric) for r in reports]
        missing = [n for n, r in zip(names, reports) if metric not in r]
        if len(missing) == len(reports):
            continue
        if missing:
            warnings.append(f"metric {metric!r} not reported by: {', '.join(missing)} (left blank)")
        rows.append((metric, values))
    return Comparison(names, rows, warnings)


def run_all(cfgs: Sequence[ScenarioConfig], workers: int = 4) -> list[dict[str, Any]]:
    """Run scenarios in worker threads; each run owns its whole world. Output keeps input order."""
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda c: run_scenario(c)[0], cfgs))


def compare(paths: Sequence[str | Path], seed: int | None = None, workers: int = 4) -> Comparison:
    if len(paths) < 2:
        raise ValueError("compare needs at least two scenario files")
    cfgs = [load_config(p, seed) for p in paths]
    return tabulate(run_all(cfgs, workers))
