"""Sequential reference algorithms. Deliberately plain Python (heapq, deque)
so they share no code path with the simulator's vectorised kernels."""
from __future__ import annotations

import heapq
from collections import deque

import numpy as np

from .graphs import INF, Graph


class UnknownSource(KeyError):
    pass


def _check(g: Graph, s: int) -> None:
    if not (1 <= s <= g.n):
        raise UnknownSource(f"source {s} not in 1..{g.n}")


def dijkstra_sssp(g: Graph, s: int) -> list[int]:
    """Distances from s; entry v-1 holds d(s, v)."""
    _check(g, s)
    dist = [INF] * (g.n + 1)
    dist[s] = 0
    heap = [(0, s)]
    adj = g.adj
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adj[u].items():
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist[1:]


def bfs_hops(g: Graph, s: int) -> list[int]:
    _check(g, s)
    hop = [INF] * (g.n + 1)
    hop[s] = 0
    q = deque([s])
    adj = g.adj
    while q:
        u = q.popleft()
        for v in adj[u]:
            if hop[v] == INF:
                hop[v] = hop[u] + 1
                q.append(v)
    return hop[1:]


def hop_limited_from(g: Graph, u: int, h: int) -> list[int]:
    """d_h(u, v) for every v by h rounds of Bellman-Ford relaxation."""
    _check(g, u)
    if h < 0:
        raise ValueError("hop budget must be non-negative")
    cur = [INF] * (g.n + 1)
    cur[u] = 0
    adj = g.adj
    for _ in range(h):
        nxt = cur[:]
        changed = False
        for x in range(1, g.n + 1):
            dx = cur[x]
            if dx == INF:
                continue
            for y, w in adj[x].items():
                if dx + w < nxt[y]:
                    nxt[y] = dx + w
                    changed = True
        cur = nxt
        if not changed:
            break
    return cur[1:]


def hop_limited_dist(g: Graph, u: int, v: int, h: int) -> int:
    _check(g, v)
    return hop_limited_from(g, u, h)[v - 1]


def apsp_oracle(g: Graph, sources: list[int] | None = None) -> np.ndarray:
    """Row i holds distances from node sources[i] (default: all nodes, in order)."""
    srcs = list(range(1, g.n + 1)) if sources is None else list(sources)
    return np.array([dijkstra_sssp(g, s) for s in srcs], dtype=np.int64).reshape(len(srcs), g.n)


def hop_oracle(g: Graph, sources: list[int] | None = None) -> np.ndarray:
    srcs = list(range(1, g.n + 1)) if sources is None else list(sources)
    return np.array([bfs_hops(g, s) for s in srcs], dtype=np.int64).reshape(len(srcs), g.n)


def diameter_oracle(g: Graph, weighted: bool = True) -> int:
    if weighted:
        return int(max(max(dijkstra_sssp(g, s)) for s in range(1, g.n + 1)))
    return int(max(max(bfs_hops(g, s)) for s in range(1, g.n + 1)))


def format_distance(d: int) -> str:
    return "inf" if d >= INF else str(int(d))


def matrix_to_csv(d: np.ndarray) -> str:
    """One row per source, comma separated, 'inf' for unreachable."""
    return "".join(",".join(format_distance(x) for x in row) + "\n" for row in d)
