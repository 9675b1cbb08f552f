import pytest
from hypothesis import given, settings, strategies as st

from consensus_lab.errors import ConfigError, SimulationIdle
from consensus_lab.netsim import (FaultPlan, FixedLatency, Network, Partition, SimNode, UniformLatency,
                                  run_loop)


class Recorder(SimNode):
    def __init__(self, node_id, net):
        super().__init__(node_id, net)
        self.got = []

    def on_message(self, env):
        self.got.append((self.net.now, env.src, env.payload))


class Chatter(Recorder):
    """Broadcasts its id and the tick on every tick."""

    def on_tick(self, tick):
        self.broadcast("hello", (self.id, tick))


def run_chatter(seed, n=4, duration=30, **faults):
    net = Network(n, seed, UniformLatency(1, 5), FaultPlan(**faults), trace=True)
    nodes = [Chatter(i, net) for i in range(n)]
    run_loop(net, nodes, duration)
    return net, nodes


def test_latency_models():
    assert FixedLatency(3).sample(None) == 3
    with pytest.raises(ConfigError):
        UniformLatency(4, 2)
    with pytest.raises(ConfigError):
        FixedLatency(0)


@given(st.integers(0, 2**32))
@settings(max_examples=20, deadline=None)
def test_same_seed_same_trace(seed):
    a, _ = run_chatter(seed, drop_rate=0.1, duplicate_rate=0.1)
    b, _ = run_chatter(seed, drop_rate=0.1, duplicate_rate=0.1)
    assert a.trace == b.trace and a.sent == b.sent and a.dropped == b.dropped


def test_different_seeds_differ():
    a, _ = run_chatter(1)
    b, _ = run_chatter(2)
    assert a.trace != b.trace


def test_messages_never_arrive_early():
    net, nodes = run_chatter(5)
    for node in nodes:
        for at, _, (_, sent) in node.got:
            assert 1 <= at - sent <= 5


def test_partition_blocks_both_directions_then_heals():
    p = Partition(0, 10, frozenset({0, 1}), frozenset({2, 3}))
    net, nodes = run_chatter(3, partitions=(p,))
    for node in nodes:
        for at, src, (_, sent) in node.got:
            if sent < 10:
                assert p.separates(node.id, src) is False
    assert any(src in {2, 3} for _, src, _ in nodes[0].got)
    assert net.dropped["partition"] > 0


def test_crashed_node_is_silent_and_deaf():
    net, nodes = run_chatter(4, crashes={2: 5})
    assert all(at < 5 for at, _, _ in nodes[2].got)
    assert all(not (src == 2 and sent >= 5) for n in nodes for _, src, (_, sent) in n.got)


def test_drop_everything():
    net, nodes = run_chatter(4, drop_rate=1.0)
    assert all(not n.got for n in nodes)
    assert net.dropped["random"] == sum(net.sent.values())


def test_duplicates_arrive_twice():
    net, nodes = run_chatter(4, duration=20, duplicate_rate=1.0)
    payloads = [p for _, _, p in nodes[0].got]
    sent_cutoff = [p for p in payloads if p[1] < 10]
    assert all(sent_cutoff.count(p) == 2 for p in sent_cutoff)


def test_step_on_empty_queue():
    with pytest.raises(SimulationIdle):
        Network(2, 0).step()


def test_fault_plan_validation():
    with pytest.raises(ConfigError):
        Network(3, 0, faults=FaultPlan(crashes={5: 1}))
    with pytest.raises(ConfigError):
        Network(3, 0, faults=FaultPlan(drop_rate=1.5))
    overlapping = (Partition(0, 10, frozenset({0}), frozenset({1})),
                   Partition(5, 15, frozenset({0}), frozenset({2})))
    with pytest.raises(ConfigError, match="contradictory"):
        Network(3, 0, faults=FaultPlan(partitions=overlapping))
    with pytest.raises(ConfigError):
        Network(3, 0, faults=FaultPlan(partitions=(Partition(0, 5, frozenset({0}), frozenset({0})),)))


def test_runtime_partition_and_heal():
    net = Network(3, 0)
    net.set_partition(0, 100, {0}, {1, 2})
    assert net.send(0, 1, "x") is None
    net.heal()
    assert net.send(0, 1, "x") is not None


def test_unknown_node_rejected():
    with pytest.raises(ValueError):
        Network(2, 0).send(0, 7, "x")
