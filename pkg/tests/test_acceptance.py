"""The eleven acceptance criteria, each at its stated tolerance and time budget.

Every criterion records one PASS/FAIL line; the lines are printed in the
pytest terminal summary, or directly when this file is run as a script.
"""
from __future__ import annotations

import random
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean

import pytest

from consensus_lab.chain import BlockHeader, ZERO_DIGEST
from consensus_lab.engines.authority import DelegateBallot, dpos_elect
from consensus_lab.engines.pbft_sweep import run_sweep
from consensus_lab.engines.pow import AttackSpec, Found, catch_up_probability, double_spend_experiment, find_nonce
from consensus_lab.engines.stake import (FinalityVote, Finalized, Pending, StakeRegistry, has_supermajority,
                                         select_validator, tally_finality)
from consensus_lab.rng import SplitMix64, stream
from consensus_lab.runner.config import load_config, parse_config
from consensus_lab.runner.dump import dump_chain, verify_dump
from consensus_lab.runner.run import report_json, run_scenario

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
RESULTS: dict[int, str] = {}


@dataclass
class Result:
    ok: bool
    detail: str


def scenario(name: str, seed: int | None = None):
    return load_config(SCENARIOS / f"{name}.json", seed)


def record(number: int, title: str, budget: float, check) -> Result:
    start = time.perf_counter()
    result = check()
    elapsed = time.perf_counter() - start
    ok = result.ok and elapsed < budget
    timing = f"{elapsed:.1f}s of {budget:.0f}s"
    RESULTS[number] = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {result.detail} ({timing})"
    return Result(ok, RESULTS[number])


# -- 1 ------------------------------------------------------------------------------

def stake_selection() -> Result:
    reg = StakeRegistry.from_stakes([100, 200, 300])
    rng = SplitMix64(20240601)
    draws = 60_000
    counts = Counter(select_validator(reg, rng) for _ in range(draws))
    expected = {0: 1 / 6, 1: 1 / 3, 2: 1 / 2}
    worst = max(abs(counts[k] / draws - p) for k, p in expected.items())
    return Result(worst <= 0.01, f"max |freq - stake share| = {worst:.4f} <= 0.01")


# -- 2 ------------------------------------------------------------------------------

def pow_attempts() -> Result:
    rng = stream(7, "acceptance", "pow")
    attempts = []
    for i in range(200):
        template = BlockHeader(ZERO_DIGEST, ZERO_DIGEST, 1, i, 8, 0, i % 5)
        found = find_nonce(template, 8, rng=rng)
        assert isinstance(found, Found)
        attempts.append(found.attempts)
    mean = fmean(attempts)
    return Result(128 <= mean <= 512, f"mean attempts {mean:.1f} in [128, 512]")


# -- 3 ------------------------------------------------------------------------------

def double_spend() -> Result:
    emp = double_spend_experiment(AttackSpec(0.3, 2), 10_000, seed=3)
    oracle = (3 / 7) ** 2
    assert catch_up_probability(0.3, 2) == pytest.approx(oracle)
    return Result(abs(emp - oracle) <= 0.03, f"empirical {emp:.4f} vs (3/7)^2 = {oracle:.4f}, tolerance 0.03")


# -- 4 ------------------------------------------------------------------------------

def pbft_safety() -> Result:
    unsafe = []
    executed = 0
    for seed in range(500):
        rep, _ = run_scenario(scenario("pbft_equivocating", seed))
        executed += rep["executed_requests"]
        if rep["safety_violations"]:
            unsafe.append(seed)
    sweep = run_sweep(2)
    ok = not unsafe and sweep.conflicts == 0
    return Result(ok, f"randomized: {len(unsafe)} conflicting runs of 500 ({executed} requests executed); "
                      f"sweep: {sweep.conflicts} conflicts over {sweep.cases} cases, {sweep.states} states")


# -- 5 ------------------------------------------------------------------------------

def pbft_liveness() -> Result:
    failed = []
    for seed in range(50):
        rep, world = run_scenario(scenario("pbft_crashed_primary", seed))
        live = [r for r in world.nodes if r.id != 0]
        if rep["executed_requests"] != 5 or min(r.view for r in live) < 1 or rep["safety_violations"]:
            failed.append(seed)
    per = {}
    for name, n in (("pbft_fault_free", 4), ("pbft_n7", 7)):
        rep, _ = run_scenario(scenario(name))
        per[n] = rep["messages_per_commit"]
    ratio = per[7] / per[4]
    ok = not failed and per[4] <= 4 * 16 and per[7] <= 4 * 49 and 2.0 <= ratio <= 3.5
    return Result(ok, f"view change recovered in {50 - len(failed)}/50 runs; messages/commit n=4 {per[4]:.0f} "
                      f"(<= 64), n=7 {per[7]:.0f} (<= 196), ratio {ratio:.2f} in [2.0, 3.5]")


# -- 6 ------------------------------------------------------------------------------

def hybrid_finality() -> Result:
    cfg = scenario("hybrid_attack")
    params = cfg.engine_params
    hp = params.hashpower
    stakes = params.stakes
    assert hp[0] / sum(hp) == pytest.approx(0.6) and stakes[0] / sum(stakes) == pytest.approx(0.2)
    violations = 0
    deep = 0
    for seed in range(200):
        rep, _ = run_scenario(scenario("hybrid_attack", seed))
        violations += rep["safety_violations"]
        twin, _ = run_scenario(scenario("pow_attack", seed))
        deep += twin["reorg_depth_max"] >= 1
    ok = violations == 0 and deep >= 100
    return Result(ok, f"hybrid finality violations {violations} over 200 runs; "
                      f"pure-PoW twins with reorg_depth_max >= 1: {deep}/200")


# -- 7 ------------------------------------------------------------------------------

def two_thirds() -> Result:
    target = b"\x01" * 32
    reg = StakeRegistry.from_stakes([100, 100, 100])
    partial = StakeRegistry.from_stakes([100, 101, 99])
    checks = [
        has_supermajority(201, 300),
        not has_supermajority(200, 300),
        isinstance(tally_finality([FinalityVote(0, target, 1, 0), FinalityVote(1, target, 1, 0)],
                                  partial, target, 1, 0), Finalized),
        isinstance(tally_finality([FinalityVote(0, target, 1, 0), FinalityVote(1, target, 1, 0)],
                                  reg, target, 1, 0), Pending),
    ]
    return Result(all(checks), f"201/300 finalizes, 200/300 does not ({sum(checks)}/4 checks)")


# -- 8 ------------------------------------------------------------------------------

def dpos() -> Result:
    rnd = random.Random(8)
    ballots = [DelegateBallot(1000 + i, rnd.randint(1, 500), frozenset(rnd.sample(range(30), 3)))
               for i in range(60)]
    sched = dpos_elect(ballots, 21)
    scores: dict[int, int] = {}
    for b in ballots:
        for c in b.approvals:
            scores[c] = scores.get(c, 0) + b.weight
    candidates = len(scores)
    oracle = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:21]
    elected_ok = len(sched.delegates) == 21 and list(sched.delegates) == [c for c, _ in oracle]
    online, _ = run_scenario(scenario("dpos_online"))
    offline, _ = run_scenario(scenario("dpos_offline"))
    slots = online["engine_metrics"]["slots"]
    ratio = offline["throughput"] / online["throughput"]
    ok = elected_ok and candidates == 30 and slots >= 300 and abs(ratio - 2 / 3) <= 0.1 * 2 / 3
    return Result(ok, f"{len(sched.delegates)} of {candidates} candidates elected, matches re-sort: {elected_ok}; "
                      f"offline/online throughput {ratio:.3f} vs 2/3 +-10% over {slots} slots")


# -- 9 ------------------------------------------------------------------------------

HEX = "0123456789abcdef"
HEX_FIELDS = ("hash", "parent", "merkle_root")
INT_FIELDS = ("height", "timestamp", "difficulty_bits", "nonce", "proposer")


def mutate(block: dict, rnd: random.Random) -> None:
    """Change one character of one field, keeping the dump well-formed."""
    choices = list(HEX_FIELDS) + list(INT_FIELDS) + [("transactions", j) for j in range(len(block["transactions"]))]
    field = rnd.choice(choices)
    if isinstance(field, tuple):
        text = block["transactions"][field[1]]
        if not text:
            block["transactions"][field[1]] = rnd.choice(HEX) * 2
            return
    else:
        text = block[field]
    if isinstance(text, str):
        i = rnd.randrange(len(text))
        new = text[:i] + rnd.choice(HEX.replace(text[i], "")) + text[i + 1:]
    else:
        digits = str(text)
        i = rnd.randrange(len(digits))
        pool = "0123456789".replace(digits[i], "")
        if i == 0 and len(digits) > 1:
            pool = pool.replace("0", "")
        new = int(digits[:i] + rnd.choice(pool) + digits[i + 1:])
    if isinstance(field, tuple):
        block["transactions"][field[1]] = new
    else:
        block[field] = new


def tamper() -> Result:
    dumps = []
    for name in ("pow_honest", "pos_basic", "poa_basic", "dpos_basic", "hybrid_basic", "pbft_fault_free"):
        cfg = scenario(name)
        _, world = run_scenario(cfg)
        dump = dump_chain(cfg, world)
        assert verify_dump(dump).ok
        dumps.append(dump)
    rnd = random.Random(9)
    caught = 0
    for _ in range(1000):
        dump = rnd.choice(dumps)
        i = rnd.randrange(len(dump["blocks"]))
        copy = {**dump, "blocks": list(dump["blocks"])}
        block = {**copy["blocks"][i], "transactions": list(copy["blocks"][i]["transactions"])}
        mutate(block, rnd)
        copy["blocks"][i] = block
        result = verify_dump(copy)
        caught += (not result.ok) and result.index in (i, i + 1)
    return Result(caught == 1000, f"{caught}/1000 mutations flagged at the mutated block or its child")


# -- 10 -----------------------------------------------------------------------------

def settlement() -> Result:
    settled = deepest = 0
    for seed in range(20):
        rep, _ = run_scenario(scenario("pow_settlement", seed))
        settled += rep["settled_reorgs"]
        deepest = max(deepest, rep["reorg_depth_max"])
    return Result(settled == 0, f"{settled} reorgs of 6-deep blocks over 20 runs (deepest reorg {deepest})")


# -- 11 -----------------------------------------------------------------------------

def determinism() -> Result:
    paths = sorted(SCENARIOS.glob("*.json"))
    diverged = [p.stem for p in paths
                if report_json(run_scenario(load_config(p))[0]) != report_json(run_scenario(load_config(p))[0])]
    inline = parse_config({"engine": "pbft", "nodes": 4, "duration": 300, "seed": 4,
                           "faults": {"drop_rate": 0.1, "duplicate_rate": 0.1}})
    if report_json(run_scenario(inline)[0]) != report_json(run_scenario(inline)[0]):
        diverged.append("inline lossy pbft")
    return Result(not diverged, f"{len(paths) + 1 - len(diverged)}/{len(paths) + 1} configs byte-identical"
                                + (f"; diverged: {', '.join(diverged)}" if diverged else ""))


CRITERIA = [
    (1, "stake-proportional selection", 5, stake_selection),
    (2, "PoW attempt distribution", 30, pow_attempts),
    (3, "double-spend catch-up", 60, double_spend),
    (4, "PBFT safety", 180, pbft_safety),
    (5, "PBFT liveness and complexity", 60, pbft_liveness),
    (6, "hybrid finality", 180, hybrid_finality),
    (7, "two-thirds boundary", 5, two_thirds),
    (8, "DPoS election and offline delegate", 60, dpos),
    (9, "tamper detection", 120, tamper),
    (10, "settlement", 180, settlement),
    (11, "determinism", 300, determinism),
]


@pytest.mark.parametrize("number,title,budget,check", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(number, title, budget, check):
    result = record(number, title, budget, check)
    print(result.detail)
    assert result.ok, result.detail


if __name__ == "__main__":
    for number, title, budget, check in CRITERIA:
        print(record(number, title, budget, check).detail, flush=True)
