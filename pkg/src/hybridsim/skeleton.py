"""Skeleton graphs on sampled nodes, source representatives, and checks
that the skeleton preserves distances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .engine import HybridNetwork
from .explore import hop_limited
from .graphs import INF, Graph, io_write, read_instance
from .oracle import apsp_oracle, bfs_hops, dijkstra_sssp, format_distance
from .primitives import disseminate
from .randkit import sample_subset

DEFAULT_XI = 16.0
MAX_RESAMPLES = 8


class EmptySkeleton(RuntimeError):
    pass


class NoSkeletonInRange(RuntimeError):
    def __init__(self, source: int, h: int):
        self.source = source
        super().__init__(f"source {source} sees no skeleton node within {h} hops")


def skeleton_probability(n: int, x: float) -> float:
    return float(n) ** -(1.0 - x)


def skeleton_radius(n: int, x: float, xi: float = DEFAULT_XI) -> int:
    """h = ceil(xi * n^(1-x) * ln n), at least 3."""
    return max(3, math.ceil(xi * float(n) ** (1.0 - x) * math.log(n))) if n > 1 else 3


@dataclass
class Skeleton:
    n: int
    members: tuple[int, ...]
    h: int
    x: float
    xi: float
    edges: list[tuple[int, int, int]]
    # row i: d_h(members[i], v) for every node v (column v-1)
    dh: np.ndarray | None = None
    attempts: int = 1
    _dist: np.ndarray | None = field(default=None, repr=False)

    @property
    def index(self) -> dict[int, int]:
        return {s: i for i, s in enumerate(self.members)}

    def is_member(self, v: int) -> bool:
        return v in set(self.members)

    def distances(self) -> np.ndarray:
        """d_S between members (row/column order of ``members``), INF when
        the skeleton graph is disconnected."""
        if self._dist is None:
            self._dist = skeleton_distances(self.members, self.edges)
        return self._dist

    def to_text(self) -> str:
        header = {
            "skeleton": f"x={self.x!r} xi={self.xi!r} h={self.h}",
            "members": ",".join(map(str, self.members)),
        }
        return io_write(Graph(self.n, self.edges), header)

    @classmethod
    def from_text(cls, text: str) -> "Skeleton":
        g, header = read_instance(text, strict=False)
        if "skeleton" not in header:
            raise ValueError("missing #skeleton header")
        fields = dict(kv.split("=", 1) for kv in header["skeleton"].split())
        members = tuple(int(v) for v in header.get("members", "").split(",") if v)
        return cls(g.n, members, int(fields["h"]), float(fields["x"]), float(fields["xi"]), list(g.edges))


def skeleton_distances(members: Sequence[int], edges: Iterable[tuple[int, int, int]]) -> np.ndarray:
    idx = {s: i for i, s in enumerate(members)}
    k = len(members)
    if k == 0:
        return np.zeros((0, 0), dtype=np.int64)
    rows, cols, vals = [], [], []
    for u, v, w in edges:
        rows.append(idx[u])
        cols.append(idx[v])
        vals.append(float(w))
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(k, k))
    d = csgraph.dijkstra(mat, directed=False)
    out = np.full((k, k), INF, dtype=np.int64)
    ok = np.isfinite(d)
    out[ok] = np.rint(d[ok]).astype(np.int64)
    return out


def sample_skeleton(n: int, x: float, seed: int, force: Iterable[int] = ()) -> tuple[np.ndarray, int]:
    """Members by coin flips from (seed, ID); reseeds up to MAX_RESAMPLES
    times if nobody joins."""
    if not (0.0 < x <= 1.0):
        raise ValueError("x must lie in (0, 1]")
    p = skeleton_probability(n, x)
    for attempt in range(1, MAX_RESAMPLES + 1):
        flags = sample_subset(n, p, seed, stream=f"skeleton.{attempt}")
        for v in force:
            flags[v - 1] = True
        if flags.any():
            return flags, attempt
    raise EmptySkeleton(f"no node joined the skeleton in {MAX_RESAMPLES} attempts (n={n}, x={x})")


def compute_skeleton(
    net: HybridNetwork,
    x: float,
    xi: float = DEFAULT_XI,
    sources: Sequence[int] = (),
    gamma_src: float | None = None,
    h: int | None = None,
    phase: str = "skeleton",
) -> Skeleton:
    """Sample V_S, then h rounds of local flooding give every skeleton node
    its incident edges {u, v} (hop(u, v) <= h) weighted by d_h.

    With ``gamma_src == 0`` the single source joins unconditionally."""
    n = net.n
    force: tuple[int, ...] = ()
    if gamma_src == 0:
        if len(sources) != 1:
            raise ValueError("gamma_src = 0 means exactly one source")
        force = (int(sources[0]),)
    flags, attempts = sample_skeleton(n, x, net.cfg.seed, force)
    members = tuple(int(v) + 1 for v in np.nonzero(flags)[0])
    h = skeleton_radius(n, x, xi) if h is None else int(h)
    dh, bits = hop_limited(net.g, members, h)
    net.local_phase(phase, h, bits)
    cols = np.array(members, dtype=np.int64) - 1
    sub = dh[:, cols]
    edges = [
        (members[i], members[j], int(sub[i, j]))
        for i in range(len(members))
        for j in range(i + 1, len(members))
        if sub[i, j] < INF
    ]
    return Skeleton(n, members, h, float(x), float(xi), edges, dh, attempts)


@dataclass(frozen=True)
class Representative:
    source: int
    rep: int
    dist: int


def choose_representatives(sk: Skeleton, g: Graph, sources: Sequence[int]) -> dict[int, Representative]:
    """r_s minimises d_h(s, u) over skeleton nodes u within h hops, ties to
    the smaller ID. Uses the skeleton's d_h rows (symmetric)."""
    if sk.dh is None:
        raise ValueError("skeleton carries no d_h table")
    members = np.array(sk.members, dtype=np.int64)
    order = np.argsort(members, kind="stable")
    out = {}
    for s in sources:
        col = sk.dh[order, s - 1]
        j = int(np.argmin(col))
        if col[j] >= INF:
            raise NoSkeletonInRange(s, sk.h)
        out[s] = Representative(int(s), int(members[order][j]), int(col[j]))
    return out


@dataclass
class Representatives:
    by_source: dict[int, Representative]
    skeleton_sources: tuple[int, ...]

    def rep(self, s: int) -> int:
        return self.by_source[s].rep

    def dist(self, s: int) -> int:
        return self.by_source[s].dist


def compute_representatives(
    net: HybridNetwork, sk: Skeleton, sources: Sequence[int], phase: str = "representatives"
) -> Representatives:
    """Each source tags its closest skeleton node; the (d_h, s, r_s) records
    are disseminated so every node holds all of them. Tagged skeleton nodes
    become the sources of the skeleton-level problem."""
    reps = choose_representatives(sk, net.g, sources)
    tokens = {s: [(r.dist, s, r.rep)] for s, r in reps.items()}
    got = disseminate(net, tokens, phase=phase, key="reps")
    by_source = {s: Representative(s, rep, d) for d, s, rep in got}
    for v in range(1, net.n + 1):
        if len(net.state[v]["reps"]) != len(reps):
            raise RuntimeError(f"node {v} misses representative records")
    return Representatives(by_source, tuple(sorted({r.rep for r in by_source.values()})))


# ---------------------------------------------------------------------------
# validation (report only)


@dataclass
class SkeletonReport:
    connected: bool = True
    distance_mismatches: list[tuple[int, int, int, int]] = field(default_factory=list)
    gap_violations: list[tuple[int, int]] = field(default_factory=list)
    uncovered: list[int] = field(default_factory=list)
    pairs_checked: int = 0

    @property
    def ok(self) -> bool:
        return self.connected and not self.distance_mismatches and not self.gap_violations

    def lines(self) -> list[str]:
        out = []
        if not self.connected:
            out.append("skeleton graph is disconnected")
        out += [
            f"d_S({u},{v}) = {format_distance(a)} but d_G = {format_distance(b)}"
            for u, v, a, b in self.distance_mismatches
        ]
        out += [f"no shortest {u}-{v} path with skeleton gaps <= h" for u, v in self.gap_violations]
        out += [f"node {v} has no skeleton node within h hops" for v in self.uncovered]
        return out


def _gap_ok(g: Graph, members: set[int], u: int, v: int, h: int, dist_u: list[int]) -> bool:
    """Is there a shortest u-v path whose consecutive anchors (u, skeleton
    nodes, v) are at most h hops apart? DP over the shortest-path DAG keeping
    the fewest hops since the last anchor."""
    order = sorted(range(1, g.n + 1), key=lambda x: dist_u[x - 1])
    since = {u: 0}
    for x in order:
        if x == u or dist_u[x - 1] >= INF:
            continue
        best = INF
        for y, w in g.adj[x].items():
            if y in since and dist_u[y - 1] + w == dist_u[x - 1] and since[y] + 1 <= h:
                best = min(best, since[y] + 1)
        if best < INF:
            since[x] = 0 if x in members else best
        if x == v:
            return best < INF
    return False


def validate_skeleton(sk: Skeleton, g: Graph, sample_pairs: int = 40, seed: int = 0) -> SkeletonReport:
    """(a) skeleton connectivity, (b) d_S = d_G for all skeleton pairs,
    (c) for sampled pairs at least h hops apart, a shortest path whose
    skeleton gaps are at most h hops. Coverage is reported separately."""
    rep = SkeletonReport()
    members = list(sk.members)
    if not members:
        rep.connected = False
        return rep
    dS = skeleton_distances(members, sk.edges)
    rep.connected = bool((dS < INF).all())
    dG = apsp_oracle(g, members)
    cols = np.array(members) - 1
    for i, u in enumerate(members):
        for j in range(i + 1, len(members)):
            if dS[i, j] != dG[i, cols[j]]:
                rep.distance_mismatches.append((u, members[j], int(dS[i, j]), int(dG[i, cols[j]])))
    mset = set(members)
    rng = np.random.default_rng(seed)
    tries = 0
    while rep.pairs_checked < sample_pairs and tries < 20 * sample_pairs:
        tries += 1
        u = int(rng.integers(1, g.n + 1))
        hops = bfs_hops(g, u)
        far = [v for v in range(1, g.n + 1) if hops[v - 1] >= sk.h]
        if not far:
            continue
        v = far[int(rng.integers(len(far)))]
        rep.pairs_checked += 1
        if not _gap_ok(g, mset, u, v, sk.h, dijkstra_sssp(g, u)):
            rep.gap_violations.append((u, v))
    covered = np.zeros(g.n, dtype=bool)
    for s in members:
        covered |= np.array(bfs_hops(g, s)) <= sk.h
    rep.uncovered = [int(v) + 1 for v in np.nonzero(~covered)[0]]
    return rep

