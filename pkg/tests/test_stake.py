from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from consensus_lab.chain import genesis_block, make_block
from consensus_lab.engines.stake import (Finalized, FinalityVote, Pending, StakeRegistry, VoteBook,
                                         detect_equivocation, evidence_tx, has_supermajority,
                                         parse_evidence, registry_after, select_validator, slash,
                                         tally_finality)
from consensus_lab.errors import ConfigError, NoEligibleValidators
from consensus_lab.rng import SplitMix64

A, B = b"\xaa" * 32, b"\xbb" * 32


def votes_for(voters, target=A, height=1, round=0):
    return [FinalityVote(v, target, height, round) for v in voters]


def test_supermajority_is_strict():
    assert has_supermajority(201, 300)
    assert not has_supermajority(200, 300)
    assert not has_supermajority(0, 0)


@given(st.integers(1, 10**6), st.data())
def test_supermajority_matches_rational_threshold(total, data):
    stake_for = data.draw(st.integers(0, total))
    assert has_supermajority(stake_for, total) == (stake_for * 3 > total * 2)


def test_tally_boundary_201_of_300():
    reg = StakeRegistry.from_stakes([100, 101, 99])  # total 300
    assert isinstance(tally_finality(votes_for([0, 1]), reg, A, 1, 0), Finalized)
    reg2 = StakeRegistry.from_stakes([100, 100, 100])
    assert isinstance(tally_finality(votes_for([0, 1]), reg2, A, 1, 0), Pending)


def test_tally_ignores_other_rounds_targets_and_dead_stake():
    reg = StakeRegistry.from_stakes([100, 100, 100, 0])
    votes = votes_for([0, 1]) + votes_for([2], round=1) + votes_for([2], target=B) + votes_for([3])
    result = tally_finality(votes, reg, A, 1, 0)
    assert isinstance(result, Pending) and result.stake_for == 200 and result.invalid_votes == 1


def test_duplicate_votes_counted_once():
    reg = StakeRegistry.from_stakes([100, 100, 100])
    assert isinstance(tally_finality(votes_for([0, 0, 0, 1]), reg, A, 1, 0), Pending)


def test_selection_proportional():
    reg = StakeRegistry.from_stakes([100, 300])
    rng = SplitMix64(4)
    counts = Counter(select_validator(reg, rng) for _ in range(20_000))
    assert counts[1] / 20_000 == pytest.approx(0.75, abs=0.015)


def test_stake_below_minimum_is_rejected():
    with pytest.raises(ConfigError, match="min_stake"):
        StakeRegistry.from_stakes([10, 100], min_stake=32)


def test_zero_stake_never_selected():
    reg = StakeRegistry.from_stakes([0, 100])
    rng = SplitMix64(0)
    assert {select_validator(reg, rng) for _ in range(200)} == {1}


def test_no_eligible_validators():
    with pytest.raises(NoEligibleValidators):
        select_validator(StakeRegistry.from_stakes([0, 0]), SplitMix64(0))


def test_equivocation_detected_once_per_key():
    votes = votes_for([0]) + votes_for([0], target=B) + votes_for([1]) + votes_for([0], target=B)
    events = detect_equivocation(votes)
    assert [e.voter for e in events] == [0]
    assert events[0].targets == tuple(sorted((A, B)))


def test_votebook_reports_each_offender_once():
    book = VoteBook()
    assert book.add(FinalityVote(0, A, 1, 0)) is None
    assert book.add(FinalityVote(0, A, 1, 0)) is None
    assert book.add(FinalityVote(0, B, 1, 0)).voter == 0
    assert book.add(FinalityVote(0, B, 2, 0)) is None
    assert book.add(FinalityVote(0, A, 2, 0)) is None


def test_slashing_removes_stake():
    reg = StakeRegistry.from_stakes([100, 100, 100])
    event = detect_equivocation(votes_for([1]) + votes_for([1], target=B))[0]
    after = slash(reg, event)
    assert after.effective_stake(1) == 0 and after.total_effective == 200
    partial = slash(reg, 1, 0.25)
    assert partial.effective_stake(1) == 75
    with pytest.raises(ValueError):
        slash(reg, 1, 0.0)


def test_slashing_evidence_roundtrips_through_blocks():
    event = detect_equivocation(votes_for([2]) + votes_for([2], target=B))[0]
    tx = evidence_tx(event)
    assert parse_evidence(tx) == event
    block = make_block(genesis_block(), [tx], timestamp=1, proposer=0)
    reg = registry_after(StakeRegistry.from_stakes([100, 100, 100]), block, 1.0)
    assert reg.effective_stake(2) == 0


def test_slashed_equivocator_cannot_finalize():
    reg = StakeRegistry.from_stakes([100, 100, 100])
    votes = votes_for([0, 1]) + votes_for([1], target=B)
    for event in detect_equivocation(votes):
        reg = slash(reg, event)
    assert isinstance(tally_finality(votes, reg, A, 1, 0), Pending)


@given(st.lists(st.integers(0, 500), min_size=1, max_size=8), st.integers(0, 2**64 - 1))
@settings(max_examples=50)
def test_selection_only_picks_positive_stake(stakes, seed):
    reg = StakeRegistry.from_stakes(stakes, min_stake=1)
    if reg.total_effective == 0:
        return
    rng = SplitMix64(seed)
    for _ in range(20):
        assert reg.effective_stake(select_validator(reg, rng)) > 0


def proportions(reg, draws, seed=0):
    rng = SplitMix64(seed)
    counts = Counter(select_validator(reg, rng) for _ in range(draws))
    return {k: v / draws for k, v in counts.items()}


def test_slashed_validator_renormalizes():
    reg = slash(StakeRegistry.from_stakes([100, 200, 300]), 2)
    freq = proportions(reg, 30_000, seed=8)
    assert 2 not in freq
    assert freq[0] == pytest.approx(1 / 3, abs=0.01) and freq[1] == pytest.approx(2 / 3, abs=0.01)


def test_single_validator_always_selected():
    assert proportions(StakeRegistry.from_stakes([0, 0, 50]), 100) == {2: 1.0}


def test_zero_votes_pending_zero():
    result = tally_finality([], StakeRegistry.from_stakes([100, 100, 100]), A, 1, 0)
    assert result == Pending(0)


def test_rounds_are_separate_keys_and_three_targets_one_event():
    assert detect_equivocation(votes_for([0], round=0) + votes_for([0], target=B, round=1)) == []
    C = b"\xcc" * 32
    events = detect_equivocation(votes_for([0]) + votes_for([0], target=B) + votes_for([0], target=C))
    assert len(events) == 1 and len(events[0].targets) == 3


def test_slash_fraction_and_idempotence():
    reg = StakeRegistry.from_stakes([100, 300])
    half = slash(reg, 0, 0.5)
    assert half.effective_stake(0) == 50 and not half.get(0).slashed
    full = slash(reg, 1)
    assert full.get(1).slashed and full.effective_stake(1) == 0
    assert slash(full, 1) == full
