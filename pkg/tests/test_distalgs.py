import math

import numpy as np
import pytest

from hybridsim.ccsim import BELLMAN_FORD_SSSP, FULL_EXCHANGE_APSP, CCAlgoSpec, cc_full_exchange_apsp
from hybridsim.distalgs import (
    MissingRecord,
    TooManySources,
    combine_diameter,
    combine_estimate,
    combine_estimates,
    diam_simulation,
    fold_additive,
    hybrid_apsp,
    hybrid_kssp,
    hybrid_sssp,
    ratio_bound_single_source,
    ratio_bound_unweighted,
    ratio_bound_weighted,
    sp_simulation,
    x_from_delta,
)
from hybridsim.engine import HybridNetwork, SimConfig
from hybridsim.graphs import INF, Graph, gen_gnp_connected, gen_path
from hybridsim.oracle import apsp_oracle, diameter_oracle, dijkstra_sssp
from hybridsim.skeleton import _gap_ok, validate_skeleton


def net_for(g, seed=0):
    return HybridNetwork(g, SimConfig(seed=seed))


# -- arithmetic ------------------------------------------------------------------


def test_x_rule():
    assert x_from_delta(0) == pytest.approx(2 / 3)
    assert x_from_delta(1) == pytest.approx(2 / 5)


def test_reference_program_bounds():
    assert ratio_bound_weighted(FULL_EXCHANGE_APSP) == 3
    assert ratio_bound_unweighted(FULL_EXCHANGE_APSP, eta=4) == 1.5
    assert ratio_bound_single_source(BELLMAN_FORD_SSSP) == 1
    spec = CCAlgoSpec(1.0, 0.0, 1.0, 2.0, 10.0)
    assert ratio_bound_weighted(spec, t_b=5) == pytest.approx(1 + 4 + 2)


def test_fold_additive():
    eps = 0.1
    alpha = fold_additive(2 + eps, 1 + eps)
    assert alpha == pytest.approx(3 + 2 * eps)
    assert 1 + 2 * alpha == pytest.approx(7 + 4 * eps)


# -- combination ---------------------------------------------------------------------


def test_combine_estimate_examples():
    assert combine_estimate(4, {10: 2}, {10: {20: 7}}, 20, 1) == 4
    assert combine_estimate(INF, {10: 2, 11: 3}, {10: {20: 7}, 11: {20: 5}}, 20, 1) == 9
    with pytest.raises(MissingRecord):
        combine_estimate(INF, {10: 2}, {}, 20, 1)
    with pytest.raises(MissingRecord):
        combine_estimate(INF, {10: 2}, {10: {20: 7}}, 20, None)


def test_vectorised_combination_matches_scalar():
    rng = np.random.default_rng(0)
    n, k, m = 12, 3, 5
    dh = rng.integers(1, 20, (k, n))
    dh[rng.random((k, n)) < 0.3] = INF
    labels = rng.integers(0, 30, (k, 2))
    d_far = rng.integers(5, 80, (m, n))
    d_far[rng.random((m, n)) < 0.5] = INF
    rep_idx = [0, 1, 1, 0, 1]
    d_rep = [3, 0, 4, 2, 9]
    got = combine_estimates(d_far, dh, labels, rep_idx, d_rep)
    for i in range(m):
        for v in range(n):
            near = {u: int(dh[u, v]) for u in range(k)}
            lab = {u: {rep_idx[i]: int(labels[u, rep_idx[i]])} for u in range(k)}
            assert got[i, v] == combine_estimate(int(d_far[i, v]), near, lab, rep_idx[i], d_rep[i])


def test_combine_diameter():
    assert combine_diameter(5, 99, 10, 1) == 5
    assert combine_diameter(11, 20, 3, 10 / 3) == 26
    assert combine_diameter(10, 0, 10, 1) == 10
    assert combine_diameter(2, 0, 1, 1) == 2


# -- pipelines ------------------------------------------------------------------------


def test_apsp_p3():
    g = gen_path(3)
    res = hybrid_apsp(net_for(g))
    assert (res.dist == apsp_oracle(g)).all()
    assert (np.diag(res.dist) == 0).all()


@pytest.mark.parametrize("seed", range(3))
def test_apsp_exact_default_xi(seed):
    g = gen_gnp_connected(128, 0.06, 8, seed)
    res = hybrid_apsp(net_for(g, seed))
    assert (res.dist == apsp_oracle(g)).all()


def grid(side, wmax, seed):
    rng = np.random.default_rng(seed)
    at = lambda r, c: r * side + c + 1
    edges = []
    for r in range(side):
        for c in range(side):
            if c + 1 < side:
                edges.append((at(r, c), at(r, c + 1), int(rng.integers(1, wmax + 1))))
            if r + 1 < side:
                edges.append((at(r, c), at(r + 1, c), int(rng.integers(1, wmax + 1))))
    return Graph(side * side, edges)


@pytest.mark.parametrize("xi,seed", [(0.3, 0), (0.3, 5), (0.2, 1), (0.1, 2)])
def test_apsp_small_radius_on_grid(xi, seed):
    # a 16x16 grid has hop diameter 30 > h, so far pairs must go through
    # the skeleton; every wrong entry must be a pair for which no shortest
    # path keeps its skeleton gaps within h hops
    g = grid(16, 4, seed)
    res = hybrid_apsp(net_for(g, seed), xi=xi)
    truth = apsp_oracle(g)
    assert (g.hop_matrix() > res.skeleton.h).any()
    assert (res.dist >= truth).all()
    members = set(res.skeleton.members)
    for a, b in np.argwhere(res.dist != truth)[:40]:
        u, v = int(a) + 1, int(b) + 1
        assert not _gap_ok(g, members, u, v, res.skeleton.h, dijkstra_sssp(g, u))


def test_apsp_small_radius_exact_cases():
    for seed in (0, 1, 2):
        g = grid(16, 4, seed)
        res = hybrid_apsp(net_for(g, seed), xi=0.3)
        assert (res.dist == apsp_oracle(g)).all()


def test_sssp_path_end():
    g = gen_path(16)
    res = hybrid_sssp(net_for(g), 1)
    assert res.estimates[0].tolist() == list(range(16))


@pytest.mark.parametrize("seed", range(3))
def test_sssp_exact(seed):
    g = gen_gnp_connected(256, 0.03, 8, seed)
    for xi in (16, 0.3):
        res = hybrid_sssp(net_for(g, seed), 5, xi=xi)
        assert res.estimates[0].tolist() == dijkstra_sssp(g, 5)
        assert res.estimate(5, 5) == 0


@pytest.mark.parametrize("seed", range(3))
def test_kssp_contract_small_radius(seed):
    g = gen_gnp_connected(256, 0.012, 6, seed)
    srcs = [3, 40, 77, 200]
    res = hybrid_kssp(net_for(g, seed), srcs, xi=0.3)
    truth = np.array([dijkstra_sssp(g, s) for s in srcs])
    hops = g.hop_matrix(srcs)
    assert (res.estimates >= truth).all()
    assert (res.estimates <= 3 * truth).all()
    close = hops <= res.eta * res.skeleton.h
    assert (res.estimates[close] == truth[close]).all()


def test_kssp_csv_schema():
    g = gen_gnp_connected(64, 0.1, 4, 0)
    res = hybrid_kssp(net_for(g), [1, 2])
    lines = res.to_csv(apsp_oracle(g, [1, 2])).splitlines()
    assert lines[0] == "node,source,estimate,oracle,ratio"
    assert len(lines) == 1 + 2 * 64


def test_too_many_sources():
    g = gen_gnp_connected(64, 0.1, 1, 0)
    spec = CCAlgoSpec(0.0, 1.0, 1.0, 1.0, 0.0, "single")
    with pytest.raises(TooManySources):
        sp_simulation(net_for(g), spec, cc_full_exchange_apsp(), [1, 2])


@pytest.mark.parametrize("xi", [16, 0.2])
def test_diameter_contract(xi):
    g = gen_gnp_connected(300, 0.01, 1, 2)
    est = diam_simulation(net_for(g, 2), xi=xi, eta=1)
    D = diameter_oracle(g, weighted=False)
    assert est.value >= D
    assert len(set(est.per_node)) == 1
    if D <= est.eta * est.h:
        assert est.value == D
    else:
        assert est.value <= (1 + 2 / est.eta) * D + 2 * est.h
    assert est.to_csv(D).splitlines()[0] == "node,Dtilde,oracleD"


def test_diameter_skeleton_branch_upper_bounds_d():
    g = gen_path(60)
    est = diam_simulation(net_for(g), x=1.0, eta=1, h=4)
    assert est.h_hat > est.h
    assert est.d_skel == 59
    assert est.value == 59 + 2 * 4


def test_diameter_uncovered_nodes_saturate():
    # one or two skeleton nodes on a long path leave most nodes without a
    # skeleton node in range; the estimate must not fall below D
    g = gen_path(60)
    est = diam_simulation(net_for(g), xi=0.05, eta=1, h=4)
    assert est.value == INF
    assert "inf" in est.to_csv(59)
