import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgmarl import commgraph as cg
from dgmarl.errors import ConfigError, UsageError


def random_connected_graph(rng, n):
    """Random spanning tree plus random extra edges."""
    edges = []
    order = rng.permutation(n)
    for k in range(1, n):
        edges.append((int(order[k]), int(order[rng.integers(0, k)])))
    extra = rng.integers(0, n + 1)
    for _ in range(extra):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            edges.append((int(i), int(j)))
    return cg.CommGraph(n, edges)


def test_neighbors_ring():
    g = cg.ring_graph(4)
    assert g.neighbors(0) == [0, 1, 3]


def test_neighbors_complete_and_isolated():
    g = cg.complete_graph(3)
    assert g.neighbors(2) == [0, 1, 2]
    iso = cg.CommGraph(3)
    assert iso.neighbors(1) == [1]


def test_neighbors_out_of_range():
    g = cg.ring_graph(4)
    with pytest.raises(UsageError):
        g.neighbors(4)


def test_is_connected_cases():
    assert cg.is_connected(cg.chain_graph(5))
    assert not cg.is_connected(cg.CommGraph(4, [(0, 1), (2, 3)]))
    assert cg.is_connected(cg.CommGraph(1))


def test_components_diagnostic():
    g = cg.CommGraph(5, [(0, 1), (2, 3)])
    assert cg.components(g) == [[0, 1], [2, 3], [4]]


def test_consensus_weights_complete():
    C = cg.consensus_weights(cg.complete_graph(4))
    assert np.allclose(C, 0.25)


def test_consensus_weights_chain3():
    C = cg.consensus_weights(cg.chain_graph(3))
    assert np.allclose(C[1], [1 / 3, 1 / 3, 1 / 3])
    assert np.allclose(C[0], [0.5, 0.5, 0.0])
    assert np.allclose(C[2], [0.0, 0.5, 0.5])


def test_consensus_weights_isolated():
    C = cg.consensus_weights(cg.CommGraph(2))
    assert np.allclose(C, np.eye(2))


def test_consensus_rows_sum_to_one_random():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(1, 17))
        g = random_connected_graph(rng, n) if n > 1 else cg.CommGraph(1)
        C = cg.consensus_weights(g)
        assert np.max(np.abs(C.sum(axis=1) - 1.0)) < 1e-12


def test_radius_graph_basic():
    g = cg.radius_graph([[0.0, 0.0], [1.0, 0.0]], 2.0)
    assert g.has_edge(0, 1)
    g = cg.radius_graph([[0.0, 0.0], [3.0, 0.0]], 2.0)
    assert not g.has_edge(0, 1)


def test_radius_graph_collinear_chain():
    g = cg.radius_graph([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], 1.5)
    assert g.has_edge(0, 1) and g.has_edge(1, 2) and not g.has_edge(0, 2)


def test_radius_graph_symmetric_property():
    rng = np.random.default_rng(11)
    for _ in range(20):
        pts = rng.uniform(0, 8, size=(int(rng.integers(2, 12)), 2))
        g = cg.radius_graph(pts, float(rng.uniform(0.5, 6.0)))
        assert np.array_equal(g.adj, g.adj.T)
        assert not g.adj.diagonal().any()


def test_average_node_degree():
    assert cg.average_node_degree(cg.complete_graph(5)) == 4.0
    assert cg.average_node_degree(cg.ring_graph(6)) == 2.0
    assert abs(cg.average_node_degree(cg.chain_graph(3)) - 4 / 3) < 1e-15


def test_gossip_identical_values_fixed_point_exact():
    rng = np.random.default_rng(3)
    v = float(rng.normal())
    for g in (cg.ring_graph(6), cg.chain_graph(4), cg.complete_graph(3)):
        out = cg.gossip_average(np.full(g.n, v), g, rounds=17)
        assert np.all(out == v)


def test_gossip_complete_two_agents_one_round():
    out = cg.gossip_average([0.0, 1.0], cg.complete_graph(2), rounds=1)
    assert np.allclose(out, [0.5, 0.5], atol=1e-15)


def test_gossip_ring8_converges_to_common_limit():
    rng = np.random.default_rng(21)
    g = cg.ring_graph(8)
    x = rng.normal(size=8)
    out = cg.gossip_average(x, g, rounds=500)
    assert out.max() - out.min() < 1e-6
    limit = cg.gossip_limit(x, g)
    assert np.max(np.abs(out - limit)) < 1e-6


def test_gossip_regular_graph_limit_is_mean():
    rng = np.random.default_rng(2)
    for g in (cg.ring_graph(8), cg.complete_graph(5)):
        x = rng.normal(size=g.n)
        limit = cg.gossip_limit(x, g)
        assert np.max(np.abs(limit - cg.exact_average(x))) < 1e-9


def test_gossip_spread_nonincreasing_and_converges():
    rng = np.random.default_rng(13)
    for _ in range(10):
        n = int(rng.integers(2, 17))
        g = random_connected_graph(rng, n)
        x = rng.normal(size=n)
        spread = x.max() - x.min()
        for _ in range(80):
            x = cg.gossip_average(x, g, rounds=1)
            new_spread = x.max() - x.min()
            assert new_spread <= spread * (1 + 1e-13) + 1e-18
            spread = new_spread


def test_gossip_connected_converges_within_bounded_rounds():
    rng = np.random.default_rng(17)
    for _ in range(20):
        n = int(rng.integers(2, 17))
        g = random_connected_graph(rng, n)
        x = rng.normal(size=n)
        out = cg.gossip_average(x, g, rounds=5000)
        assert out.max() - out.min() < 1e-6


@given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_consensus_weights_row_stochastic_hypothesis(n, seed):
    rng = np.random.default_rng(seed)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.4:
                edges.append((i, j))
    g = cg.CommGraph(n, edges)
    C = cg.consensus_weights(g)
    assert np.max(np.abs(C.sum(axis=1) - 1.0)) < 1e-12
    assert np.all(C >= 0.0)
    for i in range(n):
        assert C[i, i] > 0.0  # self always in the neighborhood


def test_edgelist_roundtrip():
    g = cg.CommGraph(5, [(0, 1), (1, 2), (3, 4), (0, 4)])
    text = cg.to_edgelist_text(g)
    assert text.splitlines()[0] == "5"
    g2 = cg.from_edgelist_text(text)
    assert g2 == g


def test_edgelist_rejects_garbage():
    with pytest.raises(ConfigError):
        cg.from_edgelist_text("")
    with pytest.raises(ConfigError):
        cg.from_edgelist_text("3\n0 x\n")


def test_graph_validation():
    with pytest.raises(ConfigError):
        cg.CommGraph(0)
    with pytest.raises(ConfigError):
        cg.CommGraph(2, [(0, 5)])
    with pytest.raises(ConfigError):
        cg.radius_graph([[0, 0]], 0.0)
    with pytest.raises(ConfigError):
        cg.CommGraph.from_adjacency(np.array([[False, True], [False, False]]))
