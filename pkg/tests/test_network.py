"""Feeder parsing, validation, and topology operators."""

import numpy as np
import pytest

from fairdlmp.network import (FeederError, RadialNetwork, build_topology,
                              bundled_feeder_path, parse_feeder, serialize_feeder)

from conftest import TWO_NODE_FEEDER, two_node_network


def path_network(n: int) -> RadialNetwork:
    return RadialNetwork(
        base_mva=1.0, base_kv=4.8, v0=1.0, delta0=0.0,
        parent=list(range(n)), r=[0.01] * n, x=[0.01] * n,
        p_limit=[10.0] * n, q_limit=[10.0] * n, epsilon=0.1,
        aggregator_nodes=[n], aggregator_labels=("A1",),
    )


class TestParsing:
    def test_bundled_feeder_shape(self):
        net = parse_feeder(bundled_feeder_path("ieee37_modified"))
        assert net.node_count == 36
        assert len(net.aggregator_nodes) == 17
        assert len(net.aggregator_labels) == 17

    def test_bundled_feeder_aggregator_nodes(self):
        net = parse_feeder(bundled_feeder_path("ieee37_modified"))
        nodes = set(net.aggregator_nodes.tolist())
        # placements used by the stock scenarios must exist
        assert {12, 25, 27, 36} <= nodes
        assert {23, 26, 31} <= nodes

    def test_two_node_feeder_valid(self):
        net = parse_feeder(TWO_NODE_FEEDER)
        assert net.node_count == 1
        assert net.parent_of(1) == 0
        assert net.r[0] == 0.01 and net.x[0] == 0.01
        assert net.aggregator_labels == ("A1",)

    def test_cycle_rejected(self):
        text = TWO_NODE_FEEDER.replace("1\n", "1\n2\n", 1).replace(
            "0 1 0.01 0.01 10.0 10.0",
            "0 1 0.01 0.01 10.0 10.0\n1 2 0.01 0.01 10.0 10.0\n2 1 0.02 0.02 10.0 10.0")
        with pytest.raises(FeederError):
            parse_feeder(text)

    def test_disconnected_node_rejected(self):
        text = TWO_NODE_FEEDER.replace("[nodes]\n1\n", "[nodes]\n1\n2\n")
        with pytest.raises(FeederError):
            parse_feeder(text)

    def test_duplicate_line_rejected(self):
        text = TWO_NODE_FEEDER.replace(
            "0 1 0.01 0.01 10.0 10.0",
            "0 1 0.01 0.01 10.0 10.0\n1 0 0.02 0.02 10.0 10.0")
        with pytest.raises(FeederError):
            parse_feeder(text)

    def test_unknown_aggregator_node_rejected(self):
        text = TWO_NODE_FEEDER.replace("A1 1", "A1 9")
        with pytest.raises(FeederError):
            parse_feeder(text)

    def test_nonpositive_impedance_rejected(self):
        text = TWO_NODE_FEEDER.replace("0 1 0.01 0.01", "0 1 0.0 0.0")
        with pytest.raises(FeederError):
            parse_feeder(text)

    def test_roundtrip_serialization(self):
        net = parse_feeder(bundled_feeder_path("ieee37_modified"))
        again = parse_feeder(serialize_feeder(net))
        assert np.array_equal(net.parent, again.parent)
        assert np.array_equal(net.r, again.r)
        assert np.array_equal(net.p_limit, again.p_limit)
        assert np.array_equal(net.aggregator_nodes, again.aggregator_nodes)
        assert net.aggregator_labels == again.aggregator_labels
        assert net.epsilon == again.epsilon

    def test_declared_topological_ids_preserved(self):
        net = parse_feeder(bundled_feeder_path("ieee37_modified"))
        # parents must precede children under the preserved labeling
        assert all(net.parent_of(k) < k for k in range(1, net.node_count + 1))


class TestTopology:
    def test_path_downstream_and_tree_matrix(self):
        net = path_network(3)
        tops = build_topology(net)
        assert tops.downstream[1] == frozenset({2, 3})
        assert tops.downstream[2] == frozenset({3})
        assert tops.downstream[3] == frozenset()
        assert np.array_equal(tops.T, [[0, 1, 1], [0, 0, 1], [0, 0, 0]])

    def test_star_downstream_and_tree_matrix(self):
        net = RadialNetwork(
            base_mva=1.0, base_kv=4.8, v0=1.0, delta0=0.0,
            parent=[0, 1, 1], r=[0.01] * 3, x=[0.01] * 3,
            p_limit=[10.0] * 3, q_limit=[10.0] * 3, epsilon=0.1,
            aggregator_nodes=[2, 3], aggregator_labels=("A1", "A2"),
        )
        tops = build_topology(net)
        assert tops.downstream[1] == frozenset({2, 3})
        assert tops.downstream[2] == frozenset()
        assert np.array_equal(tops.T, [[0, 1, 1], [0, 0, 0], [0, 0, 0]])

    def test_upstream_matches_bfs_root_path(self):
        net = parse_feeder(bundled_feeder_path("ieee37_modified"))
        tops = build_topology(net)
        # independent oracle: walk each node's parent chain iteratively
        depth, deepest = -1, None
        for k in range(1, net.node_count + 1):
            path = []
            u = net.parent_of(k)
            while u != 0:
                path.append(u)
                u = net.parent_of(u)
            assert tops.upstream[k] == frozenset(path)
            if len(path) > depth:
                depth, deepest = len(path), k
        assert deepest is not None and depth >= 3

    def test_parent_difference_operator(self):
        net = path_network(3)
        tops = build_topology(net)
        v = np.array([5.0, 7.0, 11.0])
        diff = tops.parent_difference @ v
        # line 1 hangs off the substation: its row carries only -v_1
        assert tops.root_mask[0] and not tops.root_mask[1:].any()
        assert diff[0] == -5.0
        assert diff[1] == 5.0 - 7.0
        assert diff[2] == 7.0 - 11.0

    def test_downstream_upstream_duality(self):
        net = parse_feeder(bundled_feeder_path("ieee37_modified"))
        tops = build_topology(net)
        for k in range(1, net.node_count + 1):
            for l in tops.downstream[k]:
                assert k in tops.upstream[l]


class TestValidation:
    def test_negative_impedance_rejected(self):
        with pytest.raises(FeederError):
            RadialNetwork(base_mva=1.0, base_kv=4.8, v0=1.0, delta0=0.0,
                          parent=[0], r=[-0.01], x=[0.01], p_limit=[1.0],
                          q_limit=[1.0], epsilon=0.1,
                          aggregator_nodes=[1], aggregator_labels=("A1",))

    def test_nonpositive_epsilon_rejected(self):
        with pytest.raises(FeederError):
            two_node_network(epsilon=0.0)

    def test_duplicate_aggregator_rejected(self):
        with pytest.raises(FeederError):
            RadialNetwork(base_mva=1.0, base_kv=4.8, v0=1.0, delta0=0.0,
                          parent=[0, 1], r=[0.01] * 2, x=[0.01] * 2,
                          p_limit=[1.0] * 2, q_limit=[1.0] * 2, epsilon=0.1,
                          aggregator_nodes=[1, 1], aggregator_labels=("A1", "A2"))

    def test_non_topological_parent_rejected(self):
        with pytest.raises(FeederError):
            RadialNetwork(base_mva=1.0, base_kv=4.8, v0=1.0, delta0=0.0,
                          parent=[0, 2], r=[0.01] * 2, x=[0.01] * 2,
                          p_limit=[1.0] * 2, q_limit=[1.0] * 2, epsilon=0.1,
                          aggregator_nodes=[1], aggregator_labels=("A1",))
