"""Weighted undirected graphs, instance generators and the edge-list text format.

Node IDs are the integers 1..n. Edges are stored once as (u, v, w) with u < v.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

# Sentinel for "no path". Larger than any weight sum we can build, small enough
# that adding a weight to it never overflows int64.
INF = 1 << 62


class GraphError(ValueError):
    code = "graph"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"[{self.code}] {message}{where}")


class MalformedLine(GraphError):
    code = "malformed"


class DuplicateEdge(GraphError):
    code = "duplicate_edge"


class SelfLoop(GraphError):
    code = "self_loop"


class Disconnected(GraphError):
    code = "disconnected"


class BadWeight(GraphError):
    code = "bad_weight"


class UnknownNode(GraphError):
    code = "unknown_node"


class Graph:
    """Immutable weighted graph on nodes 1..n."""

    def __init__(self, n: int, edges: Iterable[tuple[int, int, int]]):
        if n < 1:
            raise MalformedLine(f"node count must be positive, got {n}")
        self.n = int(n)
        seen: dict[tuple[int, int], int] = {}
        for u, v, w in edges:
            u, v, w = int(u), int(v), int(w)
            if u == v:
                raise SelfLoop(f"self-loop at node {u}")
            if not (1 <= u <= n and 1 <= v <= n):
                raise UnknownNode(f"edge ({u},{v}) outside 1..{n}")
            if w < 1:
                raise BadWeight(f"edge ({u},{v}) has weight {w}")
            key = (u, v) if u < v else (v, u)
            if key in seen:
                raise DuplicateEdge(f"edge {key} given twice")
            seen[key] = w
        self.edges: tuple[tuple[int, int, int], ...] = tuple(
            (u, v, w) for (u, v), w in sorted(seen.items())
        )

    @property
    def m(self) -> int:
        return len(self.edges)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Graph) and self.n == other.n and self.edges == other.edges

    def __hash__(self) -> int:
        return hash((self.n, self.edges))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.m})"

    @cached_property
    def adj(self) -> list[dict[int, int]]:
        """adj[v] maps neighbour -> weight; index 0 is unused."""
        out: list[dict[int, int]] = [dict() for _ in range(self.n + 1)]
        for u, v, w in self.edges:
            out[u][v] = w
            out[v][u] = w
        return out

    def neighbors(self, v: int) -> dict[int, int]:
        return self.adj[v]

    def weight(self, u: int, v: int) -> int:
        return self.adj[u][v]

    def degree(self, v: int) -> int:
        return len(self.adj[v])

    @cached_property
    def max_weight(self) -> int:
        return max((w for _, _, w in self.edges), default=1)

    @cached_property
    def is_unweighted(self) -> bool:
        return all(w == 1 for _, _, w in self.edges)

    @cached_property
    def csr(self) -> sparse.csr_matrix:
        """Symmetric weighted adjacency, 0-based."""
        if not self.edges:
            return sparse.csr_matrix((self.n, self.n), dtype=np.int64)
        e = np.array(self.edges, dtype=np.int64)
        rows = np.concatenate([e[:, 0], e[:, 1]]) - 1
        cols = np.concatenate([e[:, 1], e[:, 0]]) - 1
        data = np.concatenate([e[:, 2], e[:, 2]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def arcs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Directed arcs (src, dst, w) sorted by dst, plus the start offset of
        each dst block (for ``np.minimum.reduceat``). All 0-based."""
        coo = self.csr.tocoo()
        order = np.lexsort((coo.row, coo.col))
        src = coo.row[order].astype(np.int64)
        dst = coo.col[order].astype(np.int64)
        w = coo.data[order].astype(np.int64)
        starts = np.searchsorted(dst, np.arange(self.n))
        return src, dst, w, starts

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        ncomp = csgraph.connected_components(self.csr, directed=False, return_labels=False)
        return ncomp == 1

    def hop_matrix(self, sources: Sequence[int] | None = None, limit: int | None = None) -> np.ndarray:
        """BFS hop counts from each source (1-based IDs) to every node; INF if
        farther than ``limit`` or unreachable."""
        idx = None if sources is None else np.asarray(sources, dtype=np.int64) - 1
        if idx is not None and idx.size == 0:
            return np.zeros((0, self.n), dtype=np.int64)
        kw = {} if limit is None else {"limit": float(limit) + 0.5}
        d = csgraph.dijkstra(self.csr, directed=False, unweighted=True, indices=idx, **kw)
        d = np.atleast_2d(d)
        out = np.full(d.shape, INF, dtype=np.int64)
        ok = np.isfinite(d)
        out[ok] = d[ok].astype(np.int64)
        return out

    def within_hops(self, depth: int) -> np.ndarray:
        """Boolean n x n matrix: hop(u, v) <= depth. Level-by-level OR of
        packed neighbour rows; cached per depth."""
        cache = self.__dict__.setdefault("_within", {})
        if depth not in cache:
            if len(cache) >= 2:
                cache.pop(next(iter(cache)))
            reach = np.packbits(np.eye(self.n, dtype=bool), axis=1)
            if self.m:
                src, dst, _, starts = self.arcs
                has_in = np.diff(np.append(starts, dst.size)) > 0
                at = np.minimum(starts, dst.size - 1)
                for _ in range(depth):
                    red = np.bitwise_or.reduceat(reach[src], at, axis=0)
                    red[~has_in] = 0
                    new = reach | red
                    if np.array_equal(new, reach):
                        break
                    reach = new
            cache[depth] = np.unpackbits(reach, axis=1, count=self.n).astype(bool)
        return cache[depth]


# ---------------------------------------------------------------------------
# generators


def _spanning_tree(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    # random recursive tree over a random node order
    order = rng.permutation(n) + 1
    out = []
    for i in range(1, n):
        j = int(rng.integers(0, i))
        u, v = int(order[i]), int(order[j])
        out.append((min(u, v), max(u, v)))
    return out


def gen_gnp_connected(n: int, p: float, wmax: int, seed: int) -> Graph:
    """G(n, p) with uniform integer weights in [1, wmax].

    A disconnected sample is repaired by first laying down a seeded random
    spanning tree, then adding the sampled edges on top."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if not (0 < p <= 1):
        raise ValueError("p must lie in (0, 1]")
    if wmax < 1:
        raise ValueError("wmax must be at least 1")
    rng = np.random.default_rng(seed)
    pairs: set[tuple[int, int]] = set()
    for u in range(1, n):
        hits = np.nonzero(rng.random(n - u) < p)[0]
        for off in hits:
            pairs.add((u, u + 1 + int(off)))
    raw = Graph(n, ((u, v, 1) for u, v in pairs))
    if not raw.is_connected():
        pairs.update(_spanning_tree(n, rng))
    ordered = sorted(pairs)
    weights = rng.integers(1, wmax + 1, size=len(ordered))
    return Graph(n, ((u, v, int(w)) for (u, v), w in zip(ordered, weights)))


def gen_path(n: int, wmax: int = 1, seed: int = 0) -> Graph:
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = np.random.default_rng(seed)
    weights = rng.integers(1, wmax + 1, size=n - 1)
    return Graph(n, ((i, i + 1, int(weights[i - 1])) for i in range(1, n)))


@dataclass(frozen=True)
class KsspInstance:
    """Path b=1 .. pathLen+1=v2 with v1 at hop L from b; k pendant sources.

    Sources carry IDs pathLen+2 .. pathLen+1+k and are split by the seed into
    S1 (hanging off v1) and S2 (hanging off v2)."""

    graph: Graph
    b: int
    v1: int
    v2: int
    S1: tuple[int, ...]
    S2: tuple[int, ...]
    L: int
    path_len: int

    @property
    def sources(self) -> tuple[int, ...]:
        return tuple(sorted(self.S1 + self.S2))

    def expected_distance(self, s: int) -> int:
        if s in self.S1:
            return self.L + 1
        if s in self.S2:
            return self.path_len + 1
        raise KeyError(s)

    def header(self) -> dict[str, str]:
        return {
            "kind": "kssp",
            "pathLen": str(self.path_len),
            "L": str(self.L),
            "b": str(self.b),
            "v1": str(self.v1),
            "v2": str(self.v2),
            "S1": ",".join(map(str, self.S1)),
            "S2": ",".join(map(str, self.S2)),
        }


def gen_kssp_lowerbound(path_len: int, k: int, L: int | None = None, seed: int = 0) -> KsspInstance:
    if k < 2 or k % 2:
        raise ValueError("k must be a positive even number")
    if L is None:
        L = math.isqrt(k - 1) + 1  # ceil(sqrt(k))
    if L < 1:
        raise ValueError("L must be at least 1")
    if L >= path_len:
        raise ValueError(f"L={L} must be smaller than pathLen={path_len}")
    b, v1, v2 = 1, L + 1, path_len + 1
    edges = [(i, i + 1, 1) for i in range(1, path_len + 1)]
    srcs = np.arange(path_len + 2, path_len + 2 + k)
    rng = np.random.default_rng(seed)
    perm = [int(s) for s in rng.permutation(srcs)]
    S1 = tuple(sorted(perm[: k // 2]))
    S2 = tuple(sorted(perm[k // 2 :]))
    edges += [(v1, s, 1) for s in S1] + [(v2, s, 1) for s in S2]
    g = Graph(path_len + 1 + k, edges)
    return KsspInstance(g, b, v1, v2, S1, S2, L, path_len)


def _bits(x: str | Sequence[int], length: int, name: str) -> tuple[int, ...]:
    if isinstance(x, str):
        if x == "zeros":
            return (0,) * length
        if x == "ones":
            return (1,) * length
        vals = tuple(int(c) for c in x)
    else:
        vals = tuple(int(c) for c in x)
    if len(vals) != length or any(c not in (0, 1) for c in vals):
        raise ValueError(f"{name} must be {length} bits, got {len(vals)}")
    return vals


@dataclass(frozen=True)
class GammaInstance:
    """Set-disjointness diameter instance.

    ID layout: V1 = 1..k, V2 = k+1..2k, U1 = 2k+1..3k, U2 = 3k+1..4k,
    vhat = 4k+1, uhat = 4k+2, then internal path nodes. Bit index i (1-based)
    = (r-1)*k + c refers to the pair (V1[r], V2[c]) for ``a`` and to
    (U1[r], U2[c]) for ``b``; V1[j]~U1[j] and V2[j]~U2[j] are matched."""

    graph: Graph
    k: int
    ell: int
    W: int
    a: tuple[int, ...]
    b: tuple[int, ...]
    roles: Mapping[int, str] = field(repr=False)

    @property
    def disjoint(self) -> bool:
        return not any(x and y for x, y in zip(self.a, self.b))

    def members(self, role: str) -> list[int]:
        return sorted(v for v, r in self.roles.items() if r == role)

    def header(self) -> dict[str, str]:
        h = {
            "kind": "gamma",
            "k": str(self.k),
            "ell": str(self.ell),
            "W": str(self.W),
            "a": "".join(map(str, self.a)),
            "b": "".join(map(str, self.b)),
        }
        for role in ("V1", "V2", "U1", "U2", "vhat", "uhat"):
            h[f"role.{role}"] = ",".join(map(str, self.members(role)))
        return h


def gen_gamma_diam(k: int, ell: int, W: int, a: str | Sequence[int], b: str | Sequence[int]) -> GammaInstance:
    if k < 1 or ell < 1 or W < 1:
        raise ValueError("k, ell and W must be positive")
    abits = _bits(a, k * k, "a")
    bbits = _bits(b, k * k, "b")
    V1 = list(range(1, k + 1))
    V2 = list(range(k + 1, 2 * k + 1))
    U1 = list(range(2 * k + 1, 3 * k + 1))
    U2 = list(range(3 * k + 1, 4 * k + 1))
    vhat, uhat = 4 * k + 1, 4 * k + 2
    roles: dict[int, str] = {}
    for name, group in (("V1", V1), ("V2", V2), ("U1", U1), ("U2", U2)):
        for v in group:
            roles[v] = name
    roles[vhat], roles[uhat] = "vhat", "uhat"
    edges: list[tuple[int, int, int]] = []
    for group in (V1, V2, U1, U2):
        edges += [(x, y, W) for i, x in enumerate(group) for y in group[i + 1 :]]
    edges += [(vhat, x, W) for x in V1 + V2]
    edges += [(uhat, x, W) for x in U1 + U2]
    next_id = uhat + 1

    def unit_path(x: int, y: int) -> None:
        nonlocal next_id
        prev = x
        for _ in range(ell - 1):
            roles[next_id] = "pathInternal"
            edges.append((prev, next_id, 1))
            prev = next_id
            next_id += 1
        edges.append((prev, y, 1))

    for j in range(k):
        unit_path(V1[j], U1[j])
    for j in range(k):
        unit_path(V2[j], U2[j])
    unit_path(vhat, uhat)
    for r in range(k):
        for c in range(k):
            i = r * k + c
            if abits[i] == 0:
                edges.append((V1[r], V2[c], W))
            if bbits[i] == 0:
                edges.append((U1[r], U2[c], W))
    g = Graph(next_id - 1, edges)
    return GammaInstance(g, k, ell, W, abits, bbits, roles)


# ---------------------------------------------------------------------------
# text format


def io_write(g: Graph, header: Mapping[str, str] | None = None) -> str:
    lines = [f"#{key} {value}" for key, value in (header or {}).items()]
    lines.append(f"{g.n} {g.m}")
    lines += [f"{u} {v} {w}" for u, v, w in g.edges]
    return "\n".join(lines) + "\n"


def _ints(line: str, count: int, lineno: int) -> list[int]:
    parts = line.split()
    if len(parts) != count:
        raise MalformedLine(f"expected {count} integers, got {line!r}", lineno)
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise MalformedLine(f"non-integer field in {line!r}", lineno) from None


def read_instance(text: str, strict: bool = False) -> tuple[Graph, dict[str, str]]:
    """Parse the edge-list format, returning the graph and any ``#key value``
    header entries."""
    header: dict[str, str] = {}
    body: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(" ")
            header[key] = value.strip()
            continue
        body.append((lineno, line))
    if not body:
        raise MalformedLine("missing 'n m' line")
    lineno, first = body[0]
    n, m = _ints(first, 2, lineno)
    if len(body) - 1 != m:
        raise MalformedLine(f"header announces {m} edges, found {len(body) - 1}", lineno)
    edges = []
    seen: set[tuple[int, int]] = set()
    for lineno, line in body[1:]:
        u, v, w = _ints(line, 3, lineno)
        if u == v:
            raise SelfLoop(f"self-loop at node {u}", lineno)
        if not (1 <= u <= n and 1 <= v <= n):
            raise UnknownNode(f"edge ({u},{v}) outside 1..{n}", lineno)
        if w < 1:
            raise BadWeight(f"weight {w} on edge ({u},{v})", lineno)
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DuplicateEdge(f"edge {key} given twice", lineno)
        seen.add(key)
        edges.append((u, v, w))
    g = Graph(n, edges)
    if strict and not g.is_connected():
        raise Disconnected("graph is not connected")
    return g, header


def io_read(text: str, strict: bool = False) -> Graph:
    return read_instance(text, strict)[0]
