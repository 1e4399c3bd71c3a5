import numpy as np
import pytest

from dgmarl import commcost as cc
from dgmarl import commgraph as cg
from dgmarl.errors import ConfigError


# ------------------------------------------------------- event-level oracle
# Enumerates every transmitted scalar, one event at a time.

def sim_ctde(obs_sizes, act_sizes):
    count = 0
    for o, a in zip(obs_sizes, act_sizes):
        for _ in range(o + a):
            count += 1
    return count

def sim_ctde_multihop(hops, obs_sizes, act_sizes):
    count = 0
    for k, o, a in zip(hops, obs_sizes, act_sizes):
        for _ in range(k):          # payload relayed over K^i links
            count += o + a
    return count

def sim_dg_mp(graph, K, feat):
    count = 0
    for _hop in range(K):
        for i in range(graph.n):
            for _j in graph.neighbors(i):   # inclusive: the local copy counts too
                count += feat
    return count

def sim_dg_param(graph, psi):
    count = 0
    for i in range(graph.n):
        for _j in graph.neighbors(i):
            count += psi
    return count


def random_graph(rng, n):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
    return cg.CommGraph(n, edges)


def test_ctde_train_cost_examples():
    p = cc.CostParams.homogeneous(4, 3, 1)
    assert cc.ctde_train_cost(p) == 16
    p1 = cc.CostParams.homogeneous(1, 3, 1)
    assert cc.ctde_train_cost(p1) == 4
    p2 = cc.CostParams.homogeneous(8, 3, 1)
    assert cc.ctde_train_cost(p2) == 2 * cc.ctde_train_cost(p)


def test_ctde_multihop_examples():
    p = cc.CostParams.homogeneous(4, 1, 0, hops_to_center=cc.worst_case_line_hops(4))
    assert cc.ctde_multihop_cost(p) == 6
    p = cc.CostParams.homogeneous(4, 3, 1, hops_to_center=[1] * 4)
    assert cc.ctde_multihop_cost(p) == cc.ctde_train_cost(p)


def test_ctde_multihop_scaling_slope():
    ns = list(range(10, 101, 10))
    costs = [cc.ctde_multihop_cost(
        cc.CostParams.homogeneous(n, 1, 0, hops_to_center=cc.worst_case_line_hops(n)))
        for n in ns]
    assert abs(cc.loglog_slope(ns, costs) - 2.0) < 0.1


def test_dg_mp_cost_examples():
    p = cc.CostParams.homogeneous(3, 1, 1, feat_size=8, hops=1, degrees=[1, 1, 1])
    assert cc.dg_mp_cost(p) == 24
    p.hops = 0
    assert cc.dg_mp_cost(p) == 0
    ring = cc.CostParams.homogeneous(8, 1, 1, feat_size=16, hops=4,
                                     degrees=cc.ring_degrees(8))
    assert cc.dg_mp_cost(ring) == 4 * 24 * 16


def test_dg_param_cost_examples():
    p = cc.CostParams.homogeneous(3, 1, 1, param_size=10, degrees=[3, 3, 3])
    assert cc.dg_param_cost(p) == 90
    p.param_size = 0
    assert cc.dg_param_cost(p) == 0
    p.param_size = 7
    base = cc.dg_param_cost(p)
    p.param_size = 14
    assert cc.dg_param_cost(p) == 2 * base


def test_dg_total_is_sum_and_degenerate_zero():
    p = cc.CostParams.homogeneous(5, 2, 1, feat_size=3, param_size=4, hops=2,
                                  degrees=[2, 3, 3, 3, 2])
    assert cc.dg_total_cost(p) == cc.dg_mp_cost(p) + cc.dg_param_cost(p)
    z = cc.CostParams.homogeneous(5, 2, 1, feat_size=3, param_size=0, hops=0,
                                  degrees=[2, 3, 3, 3, 2])
    assert cc.dg_total_cost(z) == 0


def test_cost_formulas_match_event_simulator_exactly():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 13))
        g = random_graph(rng, n)
        obs = [int(rng.integers(1, 9)) for _ in range(n)]
        act = [int(rng.integers(1, 4)) for _ in range(n)]
        feat = int(rng.integers(1, 9))
        psi = int(rng.integers(1, 50))
        K = int(rng.integers(0, 5))
        hops = [int(h) for h in rng.integers(0, n + 1, size=n)]
        p = cc.CostParams(n=n, obs_sizes=obs, act_sizes=act, feat_size=feat,
                          param_size=psi, hops=K, hops_to_center=hops,
                          degrees=[g.degree(i) for i in range(n)]).validate()
        assert cc.ctde_train_cost(p) == sim_ctde(obs, act)
        assert cc.ctde_multihop_cost(p) == sim_ctde_multihop(hops, obs, act)
        assert cc.dg_mp_cost(p) == sim_dg_mp(g, K, feat)
        assert cc.dg_param_cost(p) == sim_dg_param(g, psi)
        assert cc.dg_total_cost(p) == sim_dg_mp(g, K, feat) + sim_dg_param(g, psi)


def test_tx_energy():
    assert cc.tx_energy(8, 2, 2) == 32
    for alpha in (2.0, 3.0, 4.0):
        assert cc.tx_energy(5, 1, alpha) == 5
        assert cc.tx_energy(5, 0, alpha) == 0
    with pytest.raises(ConfigError):
        cc.tx_energy(1, 1, 1.5)
    with pytest.raises(ConfigError):
        cc.tx_energy(1, 1, 4.5)


def test_ctde_energy_examples():
    p = cc.CostParams.homogeneous(3, 1, 1, center_distances=[0.0, 0.0, 0.0])
    assert cc.ctde_energy(p) == 0.0
    p = cc.CostParams.homogeneous(2, 1, 1, center_distances=[1.0, 2.0], bits=1.0, alpha=2.0)
    assert cc.ctde_energy(p) == 5.0
    with pytest.raises(ConfigError):
        cc.ctde_energy(cc.CostParams.homogeneous(2, 1, 1))


def test_ctde_energy_diameter_scaling():
    # N fixed, agents evenly on a line of diameter D, sink at one end
    for alpha in (2.0, 4.0):
        Ds = [1.0, 2.0, 4.0, 8.0, 16.0]
        es = []
        for D in Ds:
            dists = [i * D / 9 for i in range(10)]
            p = cc.CostParams.homogeneous(10, 1, 1, center_distances=dists, alpha=alpha)
            es.append(cc.ctde_energy(p))
        assert abs(cc.loglog_slope(Ds, es) - alpha) < 0.1


def test_dg_energy_examples():
    # no edges: only self-loops, zero energy
    g = cg.CommGraph(3)
    p = cc.with_graph(cc.CostParams.homogeneous(3, 1, 1, bits=1.0,
                                                distances=np.zeros((3, 3))), g)
    assert cc.dg_energy(p) == 0.0
    # single edge at d = R: both directions counted
    R = 2.0
    g = cg.CommGraph(2, [(0, 1)])
    D = np.array([[0.0, R], [R, 0.0]])
    p = cc.with_graph(cc.CostParams.homogeneous(2, 1, 1, bits=1.0, distances=D,
                                                alpha=3.0, comm_radius=R), g)
    assert cc.dg_energy(p) == 2 * R ** 3
    assert cc.dg_energy(p, halve_double_counting=True) == R ** 3


def test_dg_energy_radius_contract():
    g = cg.CommGraph(2, [(0, 1)])
    D = np.array([[0.0, 3.0], [3.0, 0.0]])
    p = cc.with_graph(cc.CostParams.homogeneous(2, 1, 1, distances=D, comm_radius=2.0), g)
    with pytest.raises(ConfigError):
        cc.dg_energy(p)


def test_dg_energy_bounded_degree_linear_in_n():
    ns = [8, 16, 32, 64, 128]
    es = [cc.dg_energy(cc._ring_layout_params(n, bits=4.0)) for n in ns]
    assert abs(cc.loglog_slope(ns, es) - 1.0) < 0.05


def test_dg_energy_permutation_invariance():
    rng = np.random.default_rng(3)
    n = 7
    pos = rng.uniform(0, 5, size=(n, 2))
    D = np.linalg.norm(pos[:, None] - pos[None, :], axis=2)
    g = random_graph(rng, n)
    p = cc.with_graph(cc.CostParams.homogeneous(n, 1, 1, bits=2.0, distances=D), g)
    base = cc.dg_energy(p)
    perm = rng.permutation(n)
    D2 = D[np.ix_(perm, perm)]
    adj2 = g.adj[np.ix_(perm, perm)]
    g2 = cg.CommGraph.from_adjacency(adj2)
    p2 = cc.with_graph(cc.CostParams.homogeneous(n, 1, 1, bits=2.0, distances=D2), g2)
    assert abs(cc.dg_energy(p2) - base) < 1e-9


def test_costs_homogeneous_degree_one_in_sizes():
    rng = np.random.default_rng(5)
    g = random_graph(rng, 6)
    def build(s):
        return cc.CostParams.homogeneous(
            6, 4 * s, 2 * s, feat_size=3 * s, param_size=7 * s, hops=2,
            degrees=[g.degree(i) for i in range(6)],
            hops_to_center=cc.worst_case_line_hops(6))
    a, b = build(1), build(3)
    assert cc.ctde_train_cost(b) == 3 * cc.ctde_train_cost(a)
    assert cc.ctde_multihop_cost(b) == 3 * cc.ctde_multihop_cost(a)
    assert cc.dg_mp_cost(b) == 3 * cc.dg_mp_cost(a)
    assert cc.dg_param_cost(b) == 3 * cc.dg_param_cost(a)


def test_cost_sweep_smallest_case_and_monotone():
    rows = cc.cost_sweep([2, 3, 4])
    dg = [r for r in rows if r.method == "dg"]
    assert dg[0].hops == 1
    by_method = {}
    for r in cc.cost_sweep(cc.DEFAULT_SWEEP_N):
        by_method.setdefault(r.method, []).append(r.cost)
    for costs in by_method.values():
        assert all(b > a for a, b in zip(costs, costs[1:]))


def test_cost_sweep_slopes_and_ordering():
    rows = cc.cost_sweep(cc.DEFAULT_SWEEP_N)
    by = {}
    for r in rows:
        by.setdefault(r.method, []).append(r)
    slopes = {m: cc.loglog_slope([r.n for r in rs], [r.cost for r in rs])
              for m, rs in by.items()}
    assert abs(slopes["ctde"] - 1.0) < 0.05
    assert abs(slopes["ctde_multihop"] - 2.0) < 0.05
    assert abs(slopes["dg"] - 2.0) < 0.05
    dg = {r.n: r.cost for r in by["dg"]}
    mh = {r.n: r.cost for r in by["ctde_multihop"]}
    assert all(dg[n] < mh[n] for n in dg)


def test_sweep_csv_shape():
    rows = cc.cost_sweep(list(range(2, 17)))
    text = cc.sweep_to_csv(rows)
    lines = text.strip().splitlines()
    assert lines[0] == "method,N,K,cost,energy"
    assert len(lines) == 1 + 15 * 3
