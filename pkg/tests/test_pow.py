import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from consensus_lab.chain import BlockHeader, ZERO_DIGEST, leading_zero_bits
from consensus_lab.engines.pow import (AttackSpec, Exhausted, Found, MinerConfig, PowParams,
                                       catch_up_probability, double_spend_experiment, find_nonce,
                                       run_race, tick_success_probability)
from consensus_lab.errors import ConfigError
from consensus_lab.rng import stream


def template(i=0):
    return BlockHeader(ZERO_DIGEST, ZERO_DIGEST, 1, i, 8, 0, 0)


def absorbing_walk_oracle(q, z, cap):
    """Probability of hitting gap 0 before gap ``cap`` from gap z, by solving the absorbing chain."""
    p = 1 - q
    size = cap - 1  # transient states 1..cap-1
    a = np.eye(size)
    b = np.zeros(size)
    for k in range(1, cap):
        i = k - 1
        if k - 1 == 0:
            b[i] += q
        else:
            a[i, i - 1] -= q
        if k + 1 < cap:
            a[i, i + 1] -= p
    return float(np.linalg.solve(a, b)[z - 1])


def test_found_nonce_meets_difficulty():
    result = find_nonce(template(), 8, start_nonce=0)
    assert isinstance(result, Found)
    header = template().with_nonce(result.nonce)
    assert header.digest == result.digest
    assert leading_zero_bits(result.digest) >= 8


def test_exhausted_after_budget():
    result = find_nonce(template(), 64, start_nonce=0, max_attempts=50)
    assert result == Exhausted(50)


def test_zero_difficulty_first_try():
    assert find_nonce(template(), 0, start_nonce=9).attempts == 1


@given(st.integers(0, 2**64 - 1))
@settings(max_examples=30, deadline=None)
def test_attempts_are_counted_from_start_nonce(start):
    result = find_nonce(template(), 4, start_nonce=start)
    assert result.nonce == (start + result.attempts - 1) % 2**64


def test_mean_attempts_near_two_to_the_bits():
    rng = stream(11, "test")
    attempts = [find_nonce(template(i), 6, rng=rng).attempts for i in range(300)]
    assert 32 <= np.mean(attempts) <= 128


def test_tick_success_probability():
    assert tick_success_probability(1, 0) == 1.0
    assert tick_success_probability(1, 1) == pytest.approx(0.5)
    assert tick_success_probability(2, 1) == pytest.approx(0.75)


@pytest.mark.parametrize("q,z", [(0.1, 1), (0.3, 2), (0.3, 5), (0.45, 3)])
def test_closed_form_matches_absorbing_chain(q, z):
    assert catch_up_probability(q, z) == pytest.approx(absorbing_walk_oracle(q, z, z + 400), abs=1e-9)


def test_closed_form_edges():
    assert catch_up_probability(0.3, 0) == 1.0
    assert catch_up_probability(0.6, 4) == 1.0
    assert catch_up_probability(0.3, 2) == pytest.approx((3 / 7) ** 2)


def test_experiment_matches_truncated_walk():
    q, z = 0.3, 2
    emp = double_spend_experiment(AttackSpec(q, z), 20_000, seed=3)
    # the experiment abandons at gap z + 100; the truncated oracle is indistinguishable from (q/p)^z
    assert emp == pytest.approx(absorbing_walk_oracle(q, z, z + 100), abs=0.015)


def test_experiment_lag_zero_is_certain():
    assert double_spend_experiment(AttackSpec(0.2, 0), 10, seed=0) == 1.0


def test_attack_spec_rejects_degenerate_share():
    with pytest.raises(ConfigError, match="degenerate"):
        AttackSpec(0.5, 2)
    with pytest.raises(ConfigError):
        AttackSpec(1.0, 2)
    with pytest.raises(ConfigError):
        AttackSpec(0.3, -1)


def test_honest_race_shares_follow_hashpower():
    counts = run_race([MinerConfig(0, 3), MinerConfig(1, 1)], duration=4000, difficulty_bits=7, seed=2)
    total = sum(counts.values())
    assert total > 50
    assert 0.6 <= counts[0] / total <= 0.9


def test_race_rejects_sparse_ids():
    with pytest.raises(ValueError):
        run_race([MinerConfig(0, 1), MinerConfig(2, 1)], duration=10)


def test_params_validate():
    with pytest.raises(ConfigError, match="hashpower"):
        PowParams(hashpower=[1, 1]).validate(3)


def test_single_miner_owns_everything():
    counts = run_race([MinerConfig(0, 2)], duration=500, difficulty_bits=4, seed=1)
    assert counts[0] > 0


def test_difficulty_zero_block_every_tick():
    counts = run_race([MinerConfig(0, 1)], duration=50, difficulty_bits=0, seed=1)
    assert counts[0] == 50


@pytest.mark.parametrize("power,expected", [((1, 3), 0.75), ((1, 1), 0.5)])
def test_race_share_matches_hashpower(power, expected):
    hp = [MinerConfig(i, h) for i, h in enumerate(power)]
    last = total = 0
    for seed in range(3):  # pooled over seeds so the sample is well past 400 blocks
        counts = run_race(hp, duration=10_000, difficulty_bits=6, seed=seed)
        last += counts[len(power) - 1]
        total += sum(counts.values())
    assert total >= 400
    assert last / total == pytest.approx(expected, abs=0.05)


def test_honest_network_converges_and_retargets(scenario_path):
    from consensus_lab.runner.config import load_config
    from consensus_lab.runner.run import run_scenario
    rep, world = run_scenario(load_config(scenario_path("pow_honest")))
    heads = {n.head for n in world.nodes}
    assert len(heads) <= 2  # at most a block still propagating
    node = world.nodes[0]
    chain = node.store.chain(node.head)
    assert len({b.header.difficulty_bits for b in chain[1:]}) > 1
    assert rep["safety_violations"] == 0
