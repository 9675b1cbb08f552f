import heapq
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from conftest import run_dict
from consensus_lab.engines.authority import (AuthoritySet, ChangeKind, DelegateBallot, GovernanceError,
                                             GovernanceProposal, GovernanceState, apply_change, dpos_elect,
                                             governance_vote, poa_sealer)


def members(n):
    return AuthoritySet(tuple(range(n)))


def yes(aset, kind, subject, voters):
    p = GovernanceProposal(kind, subject)
    for v in voters:
        p = governance_vote(aset, p, v)
    return p


# -- PoA rotation and governance --------------------------------------------------

def test_sealer_rotation():
    aset = AuthoritySet((4, 7, 9))
    assert poa_sealer(aset, 0) == 4
    assert poa_sealer(aset, 5) == 9  # index 5 mod 3 = 2


def test_strict_majority():
    assert yes(members(5), ChangeKind.ADD, 9, [0, 1, 2]).passed(members(5))
    assert not yes(members(4), ChangeKind.ADD, 9, [0, 1]).passed(members(4))


def test_duplicate_vote_is_idempotent_and_outsiders_rejected():
    aset = members(4)
    p = yes(aset, ChangeKind.ADD, 9, [0, 0, 0])
    assert p.votes == {0}
    with pytest.raises(GovernanceError):
        governance_vote(aset, p, 8)


def test_cannot_remove_last_member():
    with pytest.raises(GovernanceError, match="last"):
        governance_vote(AuthoritySet((3,)), GovernanceProposal(ChangeKind.REMOVE, 3), 3)
    with pytest.raises(ValueError):
        AuthoritySet(())


def test_removal_takes_effect_at_next_epoch():
    state = GovernanceState(members(3))
    for voter in (0, 1):
        state = state.with_vote(voter, ChangeKind.REMOVE, 2)
    assert state.passed and state.aset.members == (0, 1, 2)
    mid = state.advance_to(2)
    assert mid.aset.members == (0, 1, 2)
    after = state.advance_to(3)
    assert after.aset.members == (0, 1) and after.aset.epoch == 1
    assert poa_sealer(after.aset, 4) == 0


def test_invalid_votes_counted_not_raised():
    state = GovernanceState(members(3)).with_vote(7, ChangeKind.ADD, 5)
    assert state.rejected_votes == 1 and not state.open


def test_apply_change_add_and_remove():
    aset = members(2)
    assert apply_change(aset, GovernanceProposal(ChangeKind.ADD, 5)).members == (0, 1, 5)
    assert apply_change(aset, GovernanceProposal(ChangeKind.REMOVE, 0)).members == (1,)


def test_governance_scenario_adds_authority(scenario_path):
    from consensus_lab.runner.config import load_config
    from consensus_lab.runner.run import run_scenario
    rep, world = run_scenario(load_config(scenario_path("poa_basic")))
    assert 3 in rep["engine_metrics"]["authorities"]
    chain = world.nodes[0].store.chain(world.nodes[0].head)
    assert any(b.header.proposer == 3 for b in chain)
    assert rep["missed_slots"] == 0


def test_offline_sealer_leaves_gaps_and_rogue_seals_rejected(scenario_path):
    from consensus_lab.runner.config import load_config
    from consensus_lab.runner.run import run_scenario
    rep, _ = run_scenario(load_config(scenario_path("poa_offline")))
    assert rep["missed_slots"] > 0
    assert rep["engine_metrics"]["unauthorized_rejections"] > 0
    assert rep["safety_violations"] == 0


# -- DPoS election ------------------------------------------------------------------

def oracle_elect(ballots, n):
    scores = Counter()
    for b in ballots:
        scores.update({c: b.weight for c in b.approvals})
    return [c for _, c in heapq.nsmallest(n, ((-s, c) for c, s in scores.items()))]


def ballot(voter, weight, *approvals):
    return DelegateBallot(voter, weight, frozenset(approvals))


def test_thirty_candidates_twenty_one_delegates():
    ballots = [ballot(100 + c, 10 + (c * 7) % 13, c) for c in range(30)]
    sched = dpos_elect(ballots, 21)
    assert len(sched.delegates) == 21
    assert list(sched.delegates) == oracle_elect(ballots, 21)


def test_heavier_voter_ranks_first():
    assert dpos_elect([ballot(1, 100, 5), ballot(2, 1000, 6)], 2).delegates == (6, 5)


def test_equal_scores_lower_id_first():
    assert dpos_elect([ballot(1, 50, 8), ballot(2, 50, 3)], 1).delegates == (3,)


ballot_lists = st.lists(st.builds(ballot, st.integers(0, 50), st.integers(1, 1000), st.integers(0, 40),
                                  st.integers(0, 40)), min_size=1, max_size=30)


@given(ballot_lists, st.integers(1, 25))
def test_election_matches_independent_ranking(ballots, n):
    assert list(dpos_elect(ballots, n).delegates) == oracle_elect(ballots, n)


@given(ballot_lists, st.randoms())
def test_election_ignores_ballot_order(ballots, rnd):
    shuffled = list(ballots)
    rnd.shuffle(shuffled)
    assert dpos_elect(shuffled, 5).delegates == dpos_elect(ballots, 5).delegates


@given(ballot_lists, st.integers(1, 10), st.integers(1, 1000))
def test_more_support_never_demotes(ballots, n, extra):
    sched = dpos_elect(ballots, n)
    target = sched.delegates[-1]
    boosted = dpos_elect(ballots + [ballot(999, extra, target)], n)
    assert target in boosted.delegates
    assert boosted.delegates.index(target) <= sched.delegates.index(target)


def test_election_needs_ballots():
    with pytest.raises(ValueError):
        dpos_elect([], 3)


# -- DPoS runs -------------------------------------------------------------------------

def test_all_online_one_block_per_slot(scenario_path):
    from consensus_lab.runner.config import load_config
    from consensus_lab.runner.run import run_scenario
    rep, world = run_scenario(load_config(scenario_path("dpos_online")))
    assert rep["missed_slots"] == 0
    tallest = max(n.store.height(n.head) for n in world.nodes)
    assert tallest == rep["engine_metrics"]["slots"]


def test_recall_replaces_misbehaving_delegate():
    data = {"engine": "dpos", "nodes": 4, "duration": 260, "seed": 1,
            "faults": {"byzantine": [2]},
            "engine_params": {
                "delegates": 3, "slot_ticks": 3, "election_interval": 126,
                "ballots": [{"voter": 100, "weight": 100, "approvals": [0, 1, 2]},
                            {"voter": 101, "weight": 50, "approvals": [3]}],
                "ballot_updates": [{"at_tick": 60, "ballots": [
                    {"voter": 100, "weight": 100, "approvals": [0, 1, 3]}]}]}}
    rep, world = run_dict(data)
    node = world.nodes[0]
    late = [b for b in node.store.chain(node.head)[1:] if b.header.timestamp >= 126]
    assert late and all(b.header.proposer != 2 for b in late)
    assert any(b.header.proposer == 3 for b in late)
    assert world.params.schedule_at(0, 4).delegates == (0, 1, 2)
    assert world.params.schedule_at(126, 4).delegates == (3, 0, 1)
    assert rep["engine_metrics"]["election_round"] == 2
