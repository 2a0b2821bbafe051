"""Local-network explorations.

Flooding to depth d in the LOCAL model is deterministic: after d rounds a node
knows exactly what lies in its d-hop ball. These kernels compute that outcome
with array operations instead of per-node message objects; ``FloodProgram``
is the message-level equivalent, kept for cross-checking on small graphs.
"""
from __future__ import annotations

import numpy as np

from .engine import NodeContext, NodeProgram
from .graphs import INF, Graph

# accounting size of one (ID, distance) record on a local edge
RECORD_BITS = 64


def hop_ball(g: Graph, sources, depth: int) -> np.ndarray:
    """Row i: hop distance from sources[i] to every node, INF beyond depth."""
    return g.hop_matrix(list(sources), limit=depth)


def hop_limited(
    g: Graph, sources, h: int, init: np.ndarray | None = None
) -> tuple[np.ndarray, list[int]]:
    """h synchronous relaxation rounds from each source.

    Returns the matrix of d_h(source_i, v) (row i, column v-1) and the local
    bits moved per round (changed records times the node's degree). Stops
    early once nothing changes; later rounds would move nothing."""
    srcs = np.asarray(list(sources), dtype=np.int64)
    m = srcs.size
    if init is None:
        D = np.full((m, g.n), INF, dtype=np.int64)
        D[np.arange(m), srcs - 1] = 0
    else:
        D = init.astype(np.int64, copy=True)
    bits: list[int] = []
    if m == 0 or g.m == 0:
        return D, bits
    src, dst, w, starts = g.arcs
    indeg = np.diff(np.append(starts, dst.size))
    has_in = indeg > 0
    deg = np.bincount(src, minlength=g.n)
    for _ in range(h):
        cand = D[:, src] + w
        np.minimum(cand, INF, out=cand)
        red = np.minimum.reduceat(cand, np.minimum(starts, dst.size - 1), axis=1)
        red[:, ~has_in] = INF
        new = np.minimum(D, red)
        changed = new < D
        if not changed.any():
            break
        bits.append(int((changed.sum(axis=0) * deg).sum()) * RECORD_BITS)
        D = new
    return D, bits


def closest_source(hops: np.ndarray, ids) -> tuple[np.ndarray, np.ndarray]:
    """For each node, the hop-closest source (ties to the smaller ID) and its
    distance. ``hops`` rows follow ``ids``; nodes with no source in range get
    ID 0 and INF."""
    ids = np.asarray(list(ids), dtype=np.int64)
    if ids.size == 0:
        n = hops.shape[1]
        return np.zeros(n, dtype=np.int64), np.full(n, INF, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    h = hops[order]
    best = np.argmin(h, axis=0)
    dist = h[best, np.arange(h.shape[1])]
    owner = ids[order][best]
    owner = np.where(dist >= INF, 0, owner)
    return owner, dist


class FloodProgram(NodeProgram):
    """Message-level hop-limited relaxation: each round a node forwards the
    records that improved to its neighbours. After ``depth`` rounds
    ``ctx.state[key]`` holds d_depth(source, v) for every source in range."""

    def __init__(self, depth: int, is_source: bool, key: str = "flood"):
        self.depth = depth
        self.is_source = is_source
        self.key = key

    def step(self, ctx: NodeContext, local_in: list, global_in: list) -> None:
        known: dict[int, int] = ctx.state.setdefault(self.key, {})
        fresh: dict[int, int] = {}
        if ctx.tick == 1 and self.is_source:
            known[ctx.id] = 0
            fresh[ctx.id] = 0
        for sender, records in local_in:
            w = ctx.neighbors[sender]
            for s, d in records:
                nd = d + w
                if nd < known.get(s, INF) and nd < fresh.get(s, INF):
                    fresh[s] = nd
        for s, d in fresh.items():
            known[s] = min(known.get(s, INF), d)
        # a record learned in tick t has travelled t-1 hops; forward only
        # while the next hop stays within the depth budget
        if fresh and ctx.tick <= self.depth:
            payload = tuple(sorted(fresh.items()))
            for nbr in ctx.neighbors:
                ctx.send_local(nbr, payload)
