"""Congested-clique programs on skeleton nodes, executed either directly in
memory or simulated on the hybrid network (one token-routing instance per
clique round)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .engine import HybridNetwork
from .graphs import INF
from .primitives import disseminate
from .routing import RoutingPrep, routing_preparation, routing_scheme
from .skeleton import skeleton_distances


class PatternViolation(RuntimeError):
    pass


class CliqueDisagreement(RuntimeError):
    pass


@dataclass(frozen=True)
class CCAlgoSpec:
    """Framework parameters of a clique algorithm: source exponent, runtime
    exponent and scale, and the approximation contract
    d <= estimate <= alpha_mul * d + beta_add."""

    gamma_src: float
    delta: float
    eta: float = 1.0
    alpha_mul: float = 1.0
    beta_add: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma_src <= 1.0):
            raise ValueError("gamma_src must lie in [0, 1]")
        if self.delta < 0 or self.eta < 1 or self.alpha_mul < 1 or self.beta_add < 0:
            raise ValueError("need delta >= 0, eta >= 1, alpha_mul >= 1, beta_add >= 0")


FULL_EXCHANGE_APSP = CCAlgoSpec(1.0, 1.0, 1.0, 1.0, 0.0, "full-exchange-apsp")
BELLMAN_FORD_SSSP = CCAlgoSpec(0.0, 1.0, 1.0, 1.0, 0.0, "bellman-ford-sssp")


class CCProgram:
    """A clique algorithm, written per node.

    ``init`` builds a node's state from its local input. Each round, ``emit``
    returns {peer: [payload, ...]} and ``expect`` returns {peer: count}, the
    messages this node will receive, computed from its own state only.
    ``receive`` gets {peer: [payload, ...]}; ``finished`` must return the
    same verdict at every node."""

    spec: CCAlgoSpec

    def init(self, node: int, clique: tuple[int, ...], local: Any) -> dict:
        raise NotImplementedError

    def emit(self, node: int, state: dict, rnd: int) -> dict[int, list]:
        raise NotImplementedError

    def expect(self, node: int, state: dict, rnd: int) -> dict[int, int]:
        raise NotImplementedError

    def receive(self, node: int, state: dict, rnd: int, inbox: Mapping[int, list]) -> None:
        raise NotImplementedError

    def finished(self, node: int, state: dict, rnd: int) -> bool:
        raise NotImplementedError

    def output(self, node: int, state: dict) -> Any:
        raise NotImplementedError


def _peers(clique: Sequence[int], node: int) -> list[int]:
    return [p for p in clique if p != node]


class FullExchangeAPSP(CCProgram):
    """Round 1: everyone announces how many skeleton edges it owns (edge
    {u, v} is owned by u if u + v is odd, else by v, with u < v). Round t > 1:
    every owner with at least t-1 edges sends its (t-1)-th edge to all peers.
    Afterwards each node knows every edge and solves APSP locally."""

    spec = FULL_EXCHANGE_APSP

    @staticmethod
    def owner(u: int, v: int) -> int:
        u, v = min(u, v), max(u, v)
        return u if (u + v) % 2 else v

    def init(self, node: int, clique: tuple[int, ...], local: Mapping[int, int]) -> dict:
        owned = sorted((min(node, p), max(node, p), int(w)) for p, w in local.items() if self.owner(node, p) == node)
        return {"clique": clique, "owned": owned, "edges": set(owned), "counts": None, "rounds": None}

    def emit(self, node: int, state: dict, rnd: int) -> dict[int, list]:
        peers = _peers(state["clique"], node)
        if rnd == 1:
            return {p: [(len(state["owned"]),)] for p in peers}
        j = rnd - 2
        if j < len(state["owned"]):
            return {p: [state["owned"][j]] for p in peers}
        return {}

    def expect(self, node: int, state: dict, rnd: int) -> dict[int, int]:
        peers = _peers(state["clique"], node)
        if rnd == 1:
            return {p: 1 for p in peers}
        return {p: 1 for p in peers if state["counts"][p] >= rnd - 1}

    def receive(self, node: int, state: dict, rnd: int, inbox: Mapping[int, list]) -> None:
        if rnd == 1:
            state["counts"] = {p: msgs[0][0] for p, msgs in inbox.items()}
            state["counts"][node] = len(state["owned"])
            state["rounds"] = 1 + max(state["counts"].values())
            return
        for msgs in inbox.values():
            for u, v, w in msgs:
                state["edges"].add((u, v, w))

    def finished(self, node: int, state: dict, rnd: int) -> bool:
        return rnd >= state["rounds"]

    def output(self, node: int, state: dict) -> np.ndarray:
        return _apsp_cached(state["clique"], frozenset(state["edges"]))


_APSP_CACHE: dict = {}


def _apsp_cached(clique: tuple[int, ...], edges: frozenset) -> np.ndarray:
    # every node holds the same edge set; solve each distinct one once
    key = (clique, edges)
    if key not in _APSP_CACHE:
        if len(_APSP_CACHE) > 8:
            _APSP_CACHE.clear()
        _APSP_CACHE[key] = skeleton_distances(clique, sorted(edges))
    return _APSP_CACHE[key]


class BellmanFordSSSP(CCProgram):
    """Every round each node broadcasts (estimate, changed-last-round) and
    relaxes over its incident skeleton edges. A round in which nobody
    reported a change ends the run at every node."""

    spec = BELLMAN_FORD_SSSP

    def __init__(self, source: int):
        self.source = source

    def init(self, node: int, clique: tuple[int, ...], local: Mapping[int, int]) -> dict:
        if self.source not in clique:
            raise ValueError(f"source {self.source} is not a clique node")
        d = 0 if node == self.source else INF
        return {"clique": clique, "adj": dict(local), "d": d, "changed": 1, "quiet": False}

    def emit(self, node: int, state: dict, rnd: int) -> dict[int, list]:
        d = -1 if state["d"] >= INF else state["d"]
        return {p: [(d, state["changed"])] for p in _peers(state["clique"], node)}

    def expect(self, node: int, state: dict, rnd: int) -> dict[int, int]:
        return {p: 1 for p in _peers(state["clique"], node)}

    def receive(self, node: int, state: dict, rnd: int, inbox: Mapping[int, list]) -> None:
        best = state["d"]
        any_change = state["changed"]
        for p, msgs in inbox.items():
            d, changed = msgs[0]
            any_change |= changed
            if d >= 0 and p in state["adj"]:
                best = min(best, d + state["adj"][p])
        state["changed"] = int(best < state["d"])
        state["d"] = best
        state["quiet"] = not any_change

    def finished(self, node: int, state: dict, rnd: int) -> bool:
        return state["quiet"]

    def output(self, node: int, state: dict) -> int:
        return state["d"]


def cc_full_exchange_apsp() -> FullExchangeAPSP:
    return FullExchangeAPSP()


def cc_bellman_ford_sssp(source: int) -> BellmanFordSSSP:
    return BellmanFordSSSP(source)


# ---------------------------------------------------------------------------
# executors


@dataclass
class CCRun:
    outputs: dict[int, Any]
    rounds: int
    messages: int
    hybrid_rounds: dict[int, int] = field(default_factory=dict)
    prep: RoutingPrep | None = None
    setup_rounds: int = 0


def _collect(prog: CCProgram, clique: tuple[int, ...], states: dict, rnd: int):
    members = set(clique)
    sent: dict[tuple[int, int], list] = {}
    for u in clique:
        out = prog.emit(u, states[u], rnd)
        total = 0
        for p, msgs in out.items():
            if p not in members or p == u:
                raise PatternViolation(f"node {u} addressed {p}, not a peer")
            if msgs:
                sent[(u, p)] = list(msgs)
                total += len(msgs)
        if total > len(clique):
            raise PatternViolation(f"node {u} sent {total} > {len(clique)} messages in round {rnd}")
    expected: dict[int, dict[int, int]] = {r: prog.expect(r, states[r], rnd) for r in clique}
    for r in clique:
        if sum(expected[r].values()) > len(clique):
            raise PatternViolation(f"node {r} expects more than {len(clique)} messages in round {rnd}")
    for (u, p), msgs in sent.items():
        if expected[p].get(u, 0) != len(msgs):
            raise PatternViolation(
                f"round {rnd}: {u} sends {len(msgs)} to {p}, which expects {expected[p].get(u, 0)}"
            )
    for r, exp in expected.items():
        for u, c in exp.items():
            if c and (u, r) not in sent:
                raise PatternViolation(f"round {rnd}: {r} expects {c} from {u}, which sends none")
    return sent, expected


def _advance(prog: CCProgram, clique: tuple[int, ...], states: dict, rnd: int, inboxes: dict) -> bool:
    for r in clique:
        prog.receive(r, states[r], rnd, inboxes.get(r, {}))
    verdicts = {prog.finished(r, states[r], rnd) for r in clique}
    if len(verdicts) != 1:
        raise CliqueDisagreement(f"nodes disagree on termination after round {rnd}")
    return verdicts.pop()


def run_direct(
    prog: CCProgram, clique: Sequence[int], inputs: Mapping[int, Any], max_rounds: int = 100_000
) -> CCRun:
    """Reference executor: messages move in memory, no hybrid layer."""
    clique = tuple(sorted(clique))
    states = {u: prog.init(u, clique, inputs.get(u, {})) for u in clique}
    rnd, messages = 0, 0
    if len(clique) > 1:
        while True:
            rnd += 1
            if rnd > max_rounds:
                raise RuntimeError("clique program did not terminate")
            sent, _ = _collect(prog, clique, states, rnd)
            inboxes: dict[int, dict[int, list]] = {}
            for (u, p), msgs in sorted(sent.items()):
                inboxes.setdefault(p, {})[u] = msgs
                messages += len(msgs)
            if _advance(prog, clique, states, rnd, inboxes):
                break
    return CCRun({u: prog.output(u, states[u]) for u in clique}, rnd, messages)


def clique_simulation(
    net: HybridNetwork,
    prog: CCProgram,
    clique: Sequence[int],
    inputs: Mapping[int, Any],
    x: float,
    publish: bool = True,
    max_rounds: int = 100_000,
) -> CCRun:
    """Run ``prog`` on the clique of skeleton nodes: membership is made
    public first, then each clique round becomes one token-routing instance
    with sampling probability n^-(1-x) on both sides."""
    clique = tuple(sorted(clique))
    n = net.n
    start = net.round
    if publish:
        disseminate(net, {u: [(u,)] for u in clique}, phase="cc.members", key="cc.members")
    states = {u: prog.init(u, clique, inputs.get(u, {})) for u in clique}
    run = CCRun({}, 0, 0)
    if len(clique) > 1:
        p = float(n) ** -(1.0 - x)
        k = len(clique)
        prep = routing_preparation(net, clique, clique, p, k, p, k)
        run.prep = prep
        run.setup_rounds = net.round - start
        rnd = 0
        while True:
            rnd += 1
            if rnd > max_rounds:
                raise RuntimeError("clique program did not terminate")
            sent, expected = _collect(prog, clique, states, rnd)
            tokens = []
            for (u, r), msgs in sorted(sent.items()):
                for i, payload in enumerate(msgs):
                    tokens.append((u, r, i, tuple(payload)))
            want = {r: [(u, i) for u, c in exp.items() for i in range(c)] for r, exp in expected.items()}
            before = net.round
            res = routing_scheme(net, prep, tokens, tag=rnd, expected=want, prefix=f"cc.round.{rnd}")
            run.hybrid_rounds[rnd] = net.round - before
            inboxes: dict[int, dict[int, list]] = {}
            for r, toks in res.delivered.items():
                for t in sorted(toks, key=lambda t: (t.sender, t.index)):
                    inboxes.setdefault(r, {}).setdefault(t.sender, []).append(t.payload)
            delivered = sum(len(v) for v in res.delivered.values())
            if delivered != len(tokens):
                raise RuntimeError(f"clique round {rnd}: {delivered} of {len(tokens)} messages delivered")
            run.messages += len(tokens)
            if _advance(prog, clique, states, rnd, inboxes):
                break
        run.rounds = rnd
    else:
        run.setup_rounds = net.round - start
    run.outputs = {u: prog.output(u, states[u]) for u in clique}
    return run
