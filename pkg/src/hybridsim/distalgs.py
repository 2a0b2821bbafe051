"""Distance algorithms on the hybrid network: exact all-pairs shortest
paths, shortest paths from sources via a simulated clique algorithm, and the
unweighted diameter."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .ccsim import (
    BELLMAN_FORD_SSSP,
    FULL_EXCHANGE_APSP,
    CCAlgoSpec,
    CCProgram,
    CCRun,
    cc_bellman_ford_sssp,
    cc_full_exchange_apsp,
    clique_simulation,
)
from .engine import HybridNetwork
from .explore import hop_limited
from .graphs import INF
from .oracle import format_distance
from .primitives import aggregate, disseminate
from .routing import RoutingResult, token_routing
from .skeleton import (
    DEFAULT_XI,
    Representatives,
    Skeleton,
    compute_representatives,
    compute_skeleton,
    skeleton_distances,
)


class TooManySources(ValueError):
    pass


class MissingRecord(KeyError):
    pass


# ---------------------------------------------------------------------------
# framework arithmetic


def x_from_delta(delta: float) -> float:
    """Skeleton exponent balancing clique simulation against exploration."""
    return 2.0 / (3.0 + 2.0 * delta)


def ratio_bound_weighted(spec: CCAlgoSpec, t_b: float = math.inf) -> float:
    return 1.0 + 2.0 * spec.alpha_mul + (spec.beta_add / t_b if spec.beta_add else 0.0)


def ratio_bound_unweighted(spec: CCAlgoSpec, eta: float | None = None, t_b: float = math.inf) -> float:
    eta = spec.eta if eta is None else eta
    return spec.alpha_mul + 2.0 / eta + (spec.beta_add / t_b if spec.beta_add else 0.0)


def ratio_bound_single_source(spec: CCAlgoSpec, t_b: float = math.inf) -> float:
    return spec.alpha_mul + (spec.beta_add / t_b if spec.beta_add else 0.0)


def source_limit(n: int, x: float, gamma_src: float) -> int:
    """How many sources a clique program with this source exponent accepts."""
    return max(1, math.floor(float(n) ** (x * gamma_src) + 1e-9))


def _add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Saturating sum: INF if either side is INF."""
    inf = (a >= INF) | (b >= INF)
    out = np.where(inf, 0, a) + np.where(inf, 0, b)
    out[inf] = INF
    return out


# ---------------------------------------------------------------------------
# estimate combination


def combine_estimate(
    d_far: int,
    near: Mapping[int, int],
    labels: Mapping[int, Mapping[int, int]],
    rep: int,
    d_rep: int | None,
) -> int:
    """min(d_far, min over skeleton u near v of d_h(v,u) + est(u, r_s) + d_h(r_s, s)).

    ``d_far`` is the eta*h-hop distance from v to s, ``near`` maps each
    skeleton node within h hops to d_h(v, u), ``labels[u][r]`` is the clique
    estimate from u to r."""
    if d_rep is None:
        raise MissingRecord(f"no record for representative {rep}")
    best = d_far
    for u, du in near.items():
        if du >= INF:
            continue
        if u not in labels or rep not in labels[u]:
            raise MissingRecord(f"no clique estimate from {u} to {rep}")
        lab = labels[u][rep]
        if lab >= INF:
            continue
        best = min(best, du + lab + d_rep)
    return best


def combine_estimates(
    d_far: np.ndarray, dh: np.ndarray, labels: np.ndarray, rep_idx: Sequence[int], d_rep: Sequence[int]
) -> np.ndarray:
    """Vectorised Eq. of ``combine_estimate`` for all nodes and sources.

    d_far: sources x n; dh: skeleton x n (d_h rows); labels: skeleton x
    skeleton-sources; rep_idx[i] is the column of source i's representative."""
    out = np.empty_like(d_far)
    for i in range(d_far.shape[0]):
        col = labels[:, rep_idx[i]][:, None]
        via = _add(dh, np.broadcast_to(col, dh.shape)).min(axis=0) if dh.shape[0] else np.full(d_far.shape[1], INF)
        via = _add(via, np.full_like(via, d_rep[i]))
        out[i] = np.minimum(d_far[i], via)
    return out


def combine_diameter(h_hat: int, d_skel: int, h: int, eta: float) -> int:
    """h_hat if h_hat <= eta*h, else the skeleton estimate plus 2h."""
    if h_hat <= eta * h:
        return int(h_hat)
    if d_skel >= INF:
        return INF
    return int(d_skel) + 2 * int(h)


# ---------------------------------------------------------------------------
# results


def _phase_delta(net: HybridNetwork, before: Mapping[str, int]) -> dict[str, int]:
    return {t: r - before.get(t, 0) for t, r in net.metrics.phase_rounds.items() if r != before.get(t, 0)}


@dataclass
class EstimateStore:
    sources: tuple[int, ...]
    estimates: np.ndarray  # row i: estimates from sources[i] to every node
    d_far: np.ndarray
    skeleton: Skeleton
    reps: Representatives
    cc: CCRun
    eta: float
    x: float
    rounds: int = 0
    phase_rounds: dict[str, int] = field(default_factory=dict)

    def estimate(self, v: int, s: int) -> int:
        return int(self.estimates[self.sources.index(s), v - 1])

    def to_csv(self, oracle: np.ndarray | None = None) -> str:
        return estimates_csv(self.sources, self.estimates, oracle)


def _ratio(est: int, d: int) -> str:
    if d >= INF or est >= INF:
        return "inf" if est != d else "1"
    if d == 0:
        return "1" if est == 0 else "inf"
    return f"{est / d:.6f}"


def estimates_csv(sources: Sequence[int], est: np.ndarray, oracle: np.ndarray | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "source", "estimate", "oracle", "ratio"])
    for i, s in enumerate(sources):
        for v in range(1, est.shape[1] + 1):
            e = int(est[i, v - 1])
            if oracle is None:
                w.writerow([v, s, format_distance(e), "", ""])
            else:
                d = int(oracle[i, v - 1])
                w.writerow([v, s, format_distance(e), format_distance(d), _ratio(e, d)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# shortest paths through a simulated clique algorithm


def _clique_inputs(sk: Skeleton) -> dict[int, dict[int, int]]:
    inputs: dict[int, dict[int, int]] = {u: {} for u in sk.members}
    for u, v, w in sk.edges:
        inputs[u][v] = w
        inputs[v][u] = w
    return inputs


def _labels(outputs: Mapping[int, Any], members: Sequence[int], targets: Sequence[int]) -> np.ndarray:
    """Clique estimates est(u, r) as a members x targets matrix. Programs
    either output a full table over the clique or one distance."""
    idx = {s: i for i, s in enumerate(members)}
    out = np.full((len(members), len(targets)), INF, dtype=np.int64)
    for u in members:
        o = outputs[u]
        if isinstance(o, np.ndarray):
            out[idx[u]] = [o[idx[u], idx[r]] for r in targets]
        else:
            if len(targets) != 1:
                raise ValueError("a single-distance program serves exactly one source")
            out[idx[u], 0] = int(o)
    return out


def sp_simulation(
    net: HybridNetwork,
    spec: CCAlgoSpec,
    prog: CCProgram,
    sources: Sequence[int],
    eta: float | None = None,
    xi: float = DEFAULT_XI,
    x: float | None = None,
    h: int | None = None,
) -> EstimateStore:
    """Skeleton, representatives, the clique program on the skeleton, then
    eta*h rounds of local flooding; every node evaluates the combination
    rule for every source."""
    before_round, before = net.round, dict(net.metrics.phase_rounds)
    sources = tuple(int(s) for s in sources)
    if len(set(sources)) != len(sources):
        raise ValueError("sources must be distinct")
    x = x_from_delta(spec.delta) if x is None else float(x)
    eta = spec.eta if eta is None else float(eta)
    if spec.gamma_src < 1 and len(sources) > source_limit(net.n, x, spec.gamma_src):
        raise TooManySources(
            f"{len(sources)} sources exceed the limit {source_limit(net.n, x, spec.gamma_src)} of {spec.name or 'this program'}"
        )
    sk = compute_skeleton(net, x, xi, sources=sources, gamma_src=spec.gamma_src, h=h)
    reps = compute_representatives(net, sk, sources)
    cc = clique_simulation(net, prog, sk.members, _clique_inputs(sk), x)
    targets = list(reps.skeleton_sources)
    lab = _labels(cc.outputs, sk.members, targets)
    depth = max(sk.h, math.ceil(eta * sk.h))
    d_far, bits = hop_limited(net.g, sources, depth)
    net.local_phase("sp.flood", depth, bits)
    col = {r: j for j, r in enumerate(targets)}
    est = combine_estimates(
        d_far,
        sk.dh,
        lab,
        [col[reps.rep(s)] for s in sources],
        [reps.dist(s) for s in sources],
    )
    return EstimateStore(
        sources, est, d_far, sk, reps, cc, eta, x, net.round - before_round, _phase_delta(net, before)
    )


def hybrid_sssp(net: HybridNetwork, source: int, xi: float = DEFAULT_XI, h: int | None = None) -> EstimateStore:
    """Exact single-source distances: the source joins the skeleton and a
    Bellman-Ford clique program solves the skeleton."""
    return sp_simulation(net, BELLMAN_FORD_SSSP, cc_bellman_ford_sssp(source), [source], xi=xi, h=h)


def hybrid_kssp(
    net: HybridNetwork, sources: Sequence[int], eta: float | None = None, xi: float = DEFAULT_XI, h: int | None = None
) -> EstimateStore:
    """k-source estimates with the exact full-exchange clique program."""
    return sp_simulation(net, FULL_EXCHANGE_APSP, cc_full_exchange_apsp(), sources, eta=eta, xi=xi, h=h)


# ---------------------------------------------------------------------------
# exact APSP


@dataclass
class APSPResult:
    dist: np.ndarray
    skeleton: Skeleton
    routing: RoutingResult | None
    connectors: np.ndarray
    rounds: int = 0
    phase_rounds: dict[str, int] = field(default_factory=dict)

    def to_csv(self, oracle: np.ndarray | None = None) -> str:
        return estimates_csv(list(range(1, self.dist.shape[0] + 1)), self.dist, oracle)


def hybrid_apsp(
    net: HybridNetwork, xi: float = DEFAULT_XI, x: float = 0.5, h: int | None = None
) -> APSPResult:
    """Exact all-pairs distances.

    Skeleton edges are made public; each node v works out d(v, s) and a
    connector s' for every skeleton node s and sends s one token
    (d_h(v, s'), s'); s then knows d(s, v) for every v and floods these
    labels h hops; each node u finishes with
    min(d_h(u, v), min over nearby s of d_h(u, s) + d(s, v))."""
    before_round, before = net.round, dict(net.metrics.phase_rounds)
    g, n = net.g, net.n
    sk = compute_skeleton(net, x, xi, h=h)
    members = list(sk.members)
    m_idx = {s: i for i, s in enumerate(members)}
    k = len(members)

    tokens: dict[int, list] = {}
    for u, v, w in sk.edges:
        tokens.setdefault(u, []).append((u, v, w))
    public_edges = disseminate(net, tokens, phase="apsp.edges", key="apsp.edges")
    dS = skeleton_distances(members, public_edges)

    # d(v, s) = min over s' of d_h(v, s') + d_S(s', s); connector = argmin (smallest ID on ties)
    dvs = np.full((n, k), INF, dtype=np.int64)
    conn = np.zeros((n, k), dtype=np.int64)
    order = np.argsort(np.array(members))
    for j in range(k):
        cand = _add(sk.dh[order], np.broadcast_to(dS[order, j][:, None], (k, n)))
        best = np.argmin(cand, axis=0)
        dvs[:, j] = cand[best, np.arange(n)]
        conn[:, j] = np.array(members)[order][best]

    route = None
    if k:
        p_r = float(n) ** -(1.0 - x)
        toks = []
        for v in range(1, n + 1):
            for j, s in enumerate(members):
                c = int(conn[v - 1, j])
                toks.append((v, s, 0, (int(sk.dh[m_idx[c], v - 1]), c)))
        route = token_routing(net, toks, 1.0, k, p_r, n, S=range(1, n + 1), R=members)
        d_sv = np.full((k, n), INF, dtype=np.int64)
        for s, got in route.delivered.items():
            i = m_idx[s]
            for t in got:
                dh_v, c = t.payload
                ds = dS[i, m_idx[c]]
                d_sv[i, t.sender - 1] = INF if dh_v >= INF or ds >= INF else ds + dh_v
        if not np.array_equal(d_sv.T, dvs):
            raise RuntimeError("skeleton-side distances disagree with the senders' view")
    else:
        d_sv = np.zeros((0, n), dtype=np.int64)

    # labels flood h hops from skeleton nodes; short pairs come from d_h(u, v)
    net.local_phase("apsp.labels", sk.h, [k * n * 64] * min(sk.h, 1))
    all_dh, bits = hop_limited(g, range(1, n + 1), sk.h)
    net.local_phase("apsp.local", sk.h, bits)
    dist = all_dh.copy()
    for i in range(k):
        dist = np.minimum(dist, _add(np.broadcast_to(sk.dh[i][:, None], (n, n)), np.broadcast_to(d_sv[i][None, :], (n, n))))
    return APSPResult(dist, sk, route, conn, net.round - before_round, _phase_delta(net, before))


# ---------------------------------------------------------------------------
# diameter


@dataclass
class DiameterEstimate:
    h_hat: int
    d_skel: int
    h: int
    eta: float
    value: int
    per_node: list[int]
    skeleton: Skeleton | None = None
    cc: CCRun | None = None
    rounds: int = 0
    phase_rounds: dict[str, int] = field(default_factory=dict)

    def to_csv(self, oracle_d: int | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "Dtilde", "oracleD"])
        for v, d in enumerate(self.per_node, start=1):
            w.writerow([v, format_distance(d), "" if oracle_d is None else oracle_d])
        return buf.getvalue()


def diam_simulation(
    net: HybridNetwork,
    spec: CCAlgoSpec = FULL_EXCHANGE_APSP,
    prog: CCProgram | None = None,
    eta: float | None = None,
    xi: float = DEFAULT_XI,
    x: float | None = None,
    h: int | None = None,
) -> DiameterEstimate:
    """Skeleton, the clique program's skeleton diameter, eta*h+1 rounds of
    local exploration for capped hop eccentricities, a max-aggregate, and the
    two-branch rule at every node."""
    before_round, before = net.round, dict(net.metrics.phase_rounds)
    prog = prog or cc_full_exchange_apsp()
    x = x_from_delta(spec.delta) if x is None else float(x)
    eta = spec.eta if eta is None else float(eta)
    sk = compute_skeleton(net, x, xi, h=h)
    cc = clique_simulation(net, prog, sk.members, _clique_inputs(sk), x)
    tables = list(cc.outputs.values())
    if tables:
        # a disconnected skeleton has infinite diameter
        d_skel = int(np.asarray(tables[0]).max())
    else:
        d_skel = 0
    cap = math.floor(eta * sk.h) + 1
    hops = net.g.hop_matrix(None, limit=cap)
    ecc = np.where((hops >= INF).any(axis=1), cap, hops.max(axis=1, initial=0))
    ecc = np.minimum(ecc, cap)
    # nodes with no skeleton node within h hops void the skeleton branch
    uncovered = (sk.dh >= INF).all(axis=0) if sk.dh is not None else np.zeros(net.n, dtype=bool)
    net.local_phase("diam.flood", cap, [net.n * 64] * min(cap, 1))
    pairs = {v: (int(ecc[v - 1]), int(uncovered[v - 1])) for v in range(1, net.n + 1)}
    h_hat, blind = aggregate(net, pairs, _pair_max, (0, 0), phase="diam.aggregate")
    if blind:
        d_skel = INF
    value = combine_diameter(h_hat, d_skel, sk.h, eta)
    per_node = [combine_diameter(h_hat, d_skel, sk.h, eta) for _ in range(net.n)]
    return DiameterEstimate(
        h_hat, d_skel, sk.h, eta, value, per_node, sk, cc, net.round - before_round, _phase_delta(net, before)
    )


def _pair_max(a: tuple[int, int], b: tuple[int, int]) -> tuple[int, int]:
    return (max(a[0], b[0]), max(a[1], b[1]))


def fold_additive(alpha: float, weight_factor: float) -> float:
    """An additive error of ``weight_factor`` times one edge weight is at most
    that factor times the distance, so it can join the multiplicative part."""
    return alpha + weight_factor
