"""Building blocks: ID-tree aggregation and token dissemination over the
global network, ruling sets and clusters in the local network, and helper
sets for sampled node sets."""
from __future__ import annotations

import operator
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .engine import HybridNetwork, NodeContext, NodeProgram
from .explore import RECORD_BITS
from .graphs import INF, Graph
from .oracle import bfs_hops
from .randkit import ceil_log2, stable_hash64


class PropertyViolation(AssertionError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        head = "; ".join(problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        super().__init__(f"{len(problems)} property violation(s): {head}{more}")


@dataclass(frozen=True)
class Token:
    sender: int
    receiver: int
    index: int
    payload: tuple = ()

    @property
    def label(self) -> tuple[int, int, int]:
        return (self.sender, self.receiver, self.index)


# ---------------------------------------------------------------------------
# aggregation on the implicit ID tree (children of i are 2i and 2i+1)

_UP, _DOWN = 0, 1


def tree_children(v: int, n: int) -> list[int]:
    return [c for c in (2 * v, 2 * v + 1) if c <= n]


class AggregateProgram(NodeProgram):
    def __init__(self, value: Any, op: Callable[[Any, Any], Any], key: str):
        self.acc = value
        self.op = op
        self.key = key
        self.waiting: int | None = None

    def _finish_up(self, ctx: NodeContext) -> None:
        if ctx.id == 1:
            self._deliver(ctx, self.acc)
        else:
            ctx.send_global(ctx.id // 2, (_UP, self.acc))

    def _deliver(self, ctx: NodeContext, value: Any) -> None:
        ctx.state[self.key] = value
        for c in tree_children(ctx.id, ctx.n):
            ctx.send_global(c, (_DOWN, value))

    def step(self, ctx: NodeContext, local_in: list, global_in: list) -> None:
        if self.waiting is None:
            self.waiting = len(tree_children(ctx.id, ctx.n))
            if self.waiting == 0:
                self._finish_up(ctx)
        for _, (kind, value) in global_in:
            if kind == _UP:
                self.acc = self.op(self.acc, value)
                self.waiting -= 1
                if self.waiting == 0:
                    self._finish_up(ctx)
            else:
                self._deliver(ctx, value)


def aggregate(
    net: HybridNetwork,
    values: Mapping[int, Any],
    op: Callable[[Any, Any], Any] = operator.add,
    identity: Any = 0,
    phase: str = "aggregate",
    key: str = "aggregate",
) -> Any:
    """Combine one value per node (missing nodes contribute ``identity``) and
    make the result known everywhere: converge-cast then broadcast over the
    ID tree, at most 2*floor(log2 n) rounds."""
    net.run(lambda v: AggregateProgram(values.get(v, identity), op, key), phase)
    result = net.state[1][key]
    for v in range(2, net.n + 1):
        if net.state[v].get(key) != result:
            raise RuntimeError(f"node {v} missed the aggregate result")
    return result


def _pair_sum_max(x: tuple[int, int], y: tuple[int, int]) -> tuple[int, int]:
    return (x[0] + y[0], max(x[1], y[1]))


# ---------------------------------------------------------------------------
# token dissemination

_REBAL, _UPC, _DOWNC = 0, 1, 2



def owner_of(token: Hashable, n: int) -> int:
    """Public, seed-free hash choosing the node that collects a token."""
    return 1 + stable_hash64("owner", repr(token)) % n


class TreePipelineProgram(NodeProgram):
    """Rebalance tokens to hash owners during the first ``rebalance_rounds``
    ticks, then stream them up the ID tree to node 1 while node 1 streams
    every token it learns back down with fan-out 2. Up and down traffic
    share the send budget, down first; a node receives at most 2*sigma from
    its children plus sigma from its parent."""

    def __init__(self, own: Sequence, rebalance_rounds: int):
        self.outgoing = deque(own)
        self.rebalance_rounds = rebalance_rounds
        self.store: set = set()
        self.upq: deque = deque()
        self.downq: deque = deque()

    def _learn(self, ctx: NodeContext, tok) -> None:
        if tok not in self.store:
            self.store.add(tok)
            for c in tree_children(ctx.id, ctx.n):
                self.downq.append((c, tok))

    def step(self, ctx: NodeContext, local_in: list, global_in: list) -> None:
        for _, (kind, tok) in global_in:
            if kind == _DOWNC:
                self._learn(ctx, tok)
            else:
                self.upq.append(tok)
        if ctx.tick <= self.rebalance_rounds:
            while self.outgoing and ctx.sends_left > 0:
                tok = self.outgoing.popleft()
                owner = owner_of(tok, ctx.n)
                if owner == ctx.id:
                    self.upq.append(tok)
                else:
                    ctx.send_global(owner, (_REBAL, tok))
            if self.outgoing:
                ctx.wake_next()
            elif self.upq:
                ctx.wake_at(self.rebalance_rounds + 1)
            return
        if ctx.id == 1:
            while self.upq:
                self._learn(ctx, self.upq.popleft())
        while self.downq and ctx.sends_left > 0:
            c, tok = self.downq.popleft()
            ctx.send_global(c, (_DOWNC, tok))
        while self.upq and ctx.sends_left > 0:
            ctx.send_global(ctx.id // 2, (_UPC, self.upq.popleft()))
        if self.downq or self.upq:
            ctx.wake_next()


def disseminate(
    net: HybridNetwork,
    tokens: Mapping[int, Sequence],
    phase: str = "disseminate",
    key: str = "tokens",
    count_phase: str = "aggregate",
) -> list:
    """Make every token known to every node. ``tokens[v]`` lists the tokens
    node v starts with (hashable, each fitting one message). Returns the
    sorted union; each node's copy is left in ``net.state[v][key]``."""
    counts = {v: (len(ts), len(ts)) for v, ts in tokens.items() if ts}
    k, most = aggregate(net, counts, _pair_sum_max, (0, 0), phase=count_phase, key=f"{key}.count")
    if k == 0:
        for v in range(1, net.n + 1):
            net.state[v][key] = set()
        return []
    reb = -(-most // net.cfg.send_cap)
    progs = {v: TreePipelineProgram(list(tokens.get(v, ())), reb) for v in range(1, net.n + 1)}
    net.run(progs, phase)
    union = progs[1].store
    if len(union) != k:
        raise RuntimeError(f"root collected {len(union)} of {k} tokens")
    for v in range(1, net.n + 1):
        if progs[v].store != union:
            raise RuntimeError(f"node {v} holds {len(progs[v].store)} of {k} tokens")
        net.state[v][key] = union
    return sorted(union)


# ---------------------------------------------------------------------------
# ruling sets and clusters


@dataclass(frozen=True)
class RulingSet:
    members: frozenset[int]
    alpha: int
    beta: int
    mu: int
    rounds: int

    def flags(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=bool)
        out[np.array(sorted(self.members), dtype=np.int64) - 1] = True
        return out


def ruling_beta(mu: int, n: int) -> int:
    """Covering radius we guarantee: (2mu+1) * ceil(log2 n)."""
    return (2 * mu + 1) * max(1, ceil_log2(n))


def _hop_chunks(g: Graph, sources: Sequence[int], depth: int, chunk: int = 256):
    for i in range(0, len(sources), chunk):
        part = list(sources[i : i + chunk])
        yield part, g.hop_matrix(part, limit=depth)


def ruling_set(net: HybridNetwork, mu: int, phase: str = "ruling") -> RulingSet:
    """Deterministic ID-bit merging: in stage t, candidates whose IDs agree
    above bit t form a group; a bit-1 candidate drops out if a bit-0
    candidate of its group is within 2mu hops (found by a 2mu-round flood).
    Separation 2mu+1; ruling_beta gives the covering radius we certify."""
    if mu < 1:
        raise ValueError("mu must be at least 1")
    g = net.g
    n = g.n
    stages = ceil_log2(n)
    alive = np.ones(n, dtype=bool)
    ids0 = np.arange(n, dtype=np.int64)  # ID - 1
    near = g.within_hops(2 * mu) if stages else None
    bits: list[int] = []
    for t in range(1, stages + 1):
        side = (ids0 >> (t - 1)) & 1
        group = ids0 >> t
        zero = np.nonzero(alive & (side == 0))[0]
        ones = np.nonzero(alive & (side == 1))[0]
        reached = 0
        if ones.size and zero.size:
            close = near[np.ix_(ones, zero)]
            reached = int(close.sum())
            same = group[ones][:, None] == group[zero][None, :]
            alive[ones[(close & same).any(axis=1)]] = False
        bits += [reached * RECORD_BITS // max(1, 2 * mu)] * (2 * mu)
    rounds = 2 * mu * stages
    net.local_phase(phase, rounds, bits)
    members = frozenset(int(v) + 1 for v in np.nonzero(alive)[0])
    return RulingSet(members, 2 * mu + 1, ruling_beta(mu, n), mu, rounds)


def validate_ruling_set(g: Graph, rs: RulingSet) -> list[str]:
    problems = []
    members = sorted(rs.members)
    cover = [INF] * g.n
    for r in members:
        hops = bfs_hops(g, r)
        for r2 in members:
            if r2 != r and hops[r2 - 1] < rs.alpha:
                problems.append(f"rulers {r},{r2} only {hops[r2 - 1]} hops apart")
        cover = [min(a, b) for a, b in zip(cover, hops)]
    for v, c in enumerate(cover, start=1):
        if c > rs.beta:
            problems.append(f"node {v} is {c} hops from every ruler")
    return problems


def multi_source_closest(g: Graph, sources: Iterable[int], depth: int) -> tuple[list[int], list[int]]:
    """Level-synchronous BFS from all sources at once; each node keeps the
    (hop, ID)-smallest source. Index v holds the answer for node v."""
    owner = [0] * (g.n + 1)
    dist = [INF] * (g.n + 1)
    frontier = sorted(set(sources))
    for s in frontier:
        owner[s], dist[s] = s, 0
    adj = g.adj
    level = 0
    while frontier and level < depth:
        level += 1
        offer: dict[int, int] = {}
        for u in frontier:
            ou = owner[u]
            for x in adj[u]:
                if dist[x] == INF and (x not in offer or ou < offer[x]):
                    offer[x] = ou
        for x, o in offer.items():
            owner[x], dist[x] = o, level
        frontier = sorted(offer)
    return owner, dist


@dataclass
class Clustering:
    ruler_of: list[int]  # index v -> ruler ID (index 0 unused)
    hop_to_ruler: list[int]
    members: dict[int, tuple[int, ...]]

    def size(self, r: int) -> int:
        return len(self.members[r])


def build_clusters(net: HybridNetwork, rs: RulingSet, phase: str = "cluster") -> Clustering:
    """Every node joins its hop-closest ruler (ties to the smaller ID), then
    learns the member list of its cluster by flooding for 2*beta rounds."""
    g = net.g
    owner, dist = multi_source_closest(g, rs.members, rs.beta)
    missing = [v for v in range(1, g.n + 1) if owner[v] == 0]
    if missing:
        raise PropertyViolation([f"node {v} found no ruler within {rs.beta} hops" for v in missing])
    members: dict[int, list[int]] = {r: [] for r in sorted(rs.members)}
    for v in range(1, g.n + 1):
        members[owner[v]].append(v)
    net.local_phase(phase, rs.beta, [g.n * RECORD_BITS])
    member_bits = sum(len(m) * sum(g.degree(v) for v in m) for m in members.values()) * RECORD_BITS
    net.local_phase(phase, 2 * rs.beta, [member_bits])
    return Clustering(owner, dist, {r: tuple(m) for r, m in members.items()})


# ---------------------------------------------------------------------------
# helper sets


def helper_mu(k: int, p: float) -> int:
    """floor(min(sqrt(k), 1/p))."""
    if k <= 0 or p <= 0:
        return 0
    return int(np.floor(min(np.sqrt(k), 1.0 / p) + 1e-12))


def join_probability(cluster_size: int, mu: int) -> float:
    return min(2 * mu / cluster_size, 1.0)


def multiplicity_bound(n: int, c: int = 2, expectation: int = 2) -> int:
    return expectation + 3 * c * max(1, ceil_log2(n))


@dataclass
class HelperFamily:
    W: tuple[int, ...]
    mu: int
    sets: dict[int, tuple[int, ...]]
    clustering: Clustering | None
    q: dict[int, float]
    beta: int
    recruited: int = 0
    rounds: dict[str, int] = field(default_factory=dict)

    @property
    def hop_bound(self) -> int:
        """4 mu ceil(log2 n) scaled by the ruling-set slack (2mu+1)/(2mu),
        i.e. twice the covering radius."""
        return 2 * self.beta

    def multiplicity(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for hs in self.sets.values():
            for x in hs:
                counts[x] = counts.get(x, 0) + 1
        return counts

    def validate(self, g: Graph, c: int = 2) -> list[str]:
        problems = []
        for w in self.W:
            if len(self.sets.get(w, ())) < self.mu:
                problems.append(f"|H_{w}| = {len(self.sets.get(w, ()))} < mu = {self.mu}")
        # hop distances from scipy's BFS, independent of the cluster code
        with_sets = [w for w in self.W if self.sets.get(w)]
        for part, d in _hop_chunks(g, with_sets, self.hop_bound):
            for row, w in zip(d, part):
                far = [x for x in self.sets[w] if row[x - 1] > self.hop_bound]
                if far:
                    problems.append(f"H_{w} has members beyond {self.hop_bound} hops: {far[:3]}")
        cap = multiplicity_bound(g.n, c)
        for x, cnt in self.multiplicity().items():
            if cnt > cap:
                problems.append(f"node {x} is in {cnt} > {cap} helper sets")
        return problems

    def check(self, g: Graph) -> "HelperFamily":
        problems = self.validate(g)
        if problems:
            raise PropertyViolation(problems)
        return self


def compute_helpers(
    net: HybridNetwork,
    W: Iterable[int],
    mu: int,
    top_up: bool = True,
    validate: bool = True,
) -> HelperFamily:
    """Ruling set, clustering, then every node joins H_w for each w of its
    cluster with probability min(2mu/|C|, 1).

    With ``top_up`` the sampled sets are completed: members announce
    themselves to w (2*beta rounds), an aggregate tells everyone whether any
    set fell short of mu, and if so each short w recruits its hop-closest
    cluster members and notifies them (another 2*beta rounds)."""
    Wt = tuple(sorted(set(W)))
    if mu < 1 or not Wt:
        return HelperFamily(Wt, max(mu, 0), {w: () for w in Wt}, None, {}, 0)
    start = dict(net.metrics.phase_rounds)
    g = net.g
    rs = ruling_set(net, mu)
    cl = build_clusters(net, rs)
    wset = set(Wt)
    in_cluster = {r: [v for v in m if v in wset] for r, m in cl.members.items()}
    q = {r: join_probability(len(m), mu) for r, m in cl.members.items()}
    sets: dict[int, list[int]] = {w: [] for w in Wt}
    for v in range(1, g.n + 1):
        r = cl.ruler_of[v]
        targets = in_cluster[r]
        if not targets:
            continue
        draws = net.node_rng(v).random(len(targets))
        for w, u in zip(targets, draws):
            if u < q[r]:
                sets[w].append(v)
    recruited = 0
    if top_up:
        net.local_phase("helpers", 2 * rs.beta, [sum(len(s) for s in sets.values()) * RECORD_BITS])
        deficit = {w: max(0, mu - len(sets[w])) for w in Wt}
        worst = aggregate(net, deficit, max, 0, phase="helpers", key="helpers.deficit")
        if worst > 0:
            short = [w for w in Wt if deficit[w]]
            for part, d in _hop_chunks(g, short, 2 * rs.beta):
                for row, w in zip(d, part):
                    have = set(sets[w])
                    pool = sorted((row[x - 1], x) for x in cl.members[cl.ruler_of[w]] if x not in have)
                    for _, x in pool[: deficit[w]]:
                        sets[w].append(x)
                        recruited += 1
            net.local_phase("helpers", 2 * rs.beta, [recruited * RECORD_BITS])
    fam = HelperFamily(
        Wt,
        mu,
        {w: tuple(sorted(s)) for w, s in sets.items()},
        cl,
        q,
        rs.beta,
        recruited,
    )
    fam.rounds = {
        tag: r - start.get(tag, 0) for tag, r in net.metrics.phase_rounds.items() if r != start.get(tag, 0)
    }
    if validate:
        fam.check(g)
    return fam
