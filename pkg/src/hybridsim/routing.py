"""Token routing between sampled sender and receiver sets.

Senders hand their tokens to nearby helpers over the local network; helpers
push them to pseudo-random intermediates chosen by a shared k-wise
independent hash of the token label; the receivers' helpers fetch them from
the same intermediates and bring them home locally.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .engine import HybridNetwork, NodeContext, NodeProgram
from .primitives import HelperFamily, Token, aggregate, compute_helpers, disseminate, helper_mu
from .randkit import (
    HashFamilyMember,
    LabelCodec,
    member_from_words,
    output_bits,
    routing_independence,
    routing_member,
)


class RoutingError(RuntimeError):
    pass


class HelperOverload(RoutingError):
    pass


class UnansweredRequest(RoutingError):
    def __init__(self, key: int, node: int):
        self.key, self.node = key, node
        super().__init__(f"intermediate {node} holds no token for requested label key {key}")


class MissingToken(RoutingError):
    def __init__(self, label: tuple[int, int, int], detail: str = ""):
        self.label = label
        super().__init__(f"token {label} not delivered{': ' + detail if detail else ''}")


_PUSH, _REQ, _ANS = 0, 1, 2
STORE = "route.store"


@dataclass
class RoutingPrep:
    """Everything reusable across routing instances with the same sets:
    helper families and the shared hash function."""

    S: tuple[int, ...]
    R: tuple[int, ...]
    p_S: float
    k_S: int
    p_R: float
    k_R: int
    H_S: HelperFamily
    H_R: HelperFamily
    member: HashFamilyMember
    codec: LabelCodec
    rounds: int = 0

    @property
    def mu_S(self) -> int:
        return self.H_S.mu

    @property
    def mu_R(self) -> int:
        return self.H_R.mu

    @property
    def prep_depth(self) -> int:
        """Senders reach their helpers and receivers reach theirs in parallel."""
        return 2 * max(self.H_S.beta, self.H_R.beta)

    @property
    def collect_depth(self) -> int:
        return 2 * self.H_R.beta


@dataclass
class RoutingResult:
    delivered: dict[int, list[Token]]
    prep: RoutingPrep
    rounds: int
    phase_rounds: dict[str, int] = field(default_factory=dict)
    push_rounds: int = 0
    request_rounds: int = 0
    max_helper_load: int = 0  # items of one owner on one of its helpers
    max_node_load: int = 0  # items on one node, summed over owners it helps

    def tokens_for(self, r: int) -> list[Token]:
        return self.delivered.get(r, [])


def _normalize(tokens: Iterable) -> list[Token]:
    out = []
    for t in tokens:
        if isinstance(t, Token):
            out.append(t)
        else:
            s, r, i, *rest = t
            payload = rest[0] if rest else ()
            out.append(Token(int(s), int(r), int(i), tuple(payload)))
    return out


def distribute_hash(net: HybridNetwork, member: HashFamilyMember, phase: str = "route.seed") -> HashFamilyMember:
    """Node 1 publishes the seed of its hash function; every node rebuilds it
    from the disseminated seed words."""
    word_bits = max(8, net.cfg.message_bits - 16)
    words = member.seed_words(word_bits)
    tokens = {1: [(j, w) for j, w in enumerate(words)]} if words else {}
    got = disseminate(net, tokens, phase=phase, key="route.seedwords", count_phase=phase)
    rebuilt = member_from_words(member.a, member.b, member.k, [w for _, w in sorted(got)], word_bits)
    if rebuilt != member:
        raise RoutingError("seed words did not reproduce the hash function")
    for v in range(1, net.n + 1):
        net.state[v].pop("route.seedwords", None)
    return rebuilt


def routing_preparation(
    net: HybridNetwork,
    S: Iterable[int],
    R: Iterable[int],
    p_S: float,
    k_S: int,
    p_R: float,
    k_R: int,
    member: HashFamilyMember | None = None,
    top_up: bool = True,
) -> RoutingPrep:
    """Compute helper families for S and R and agree on a hash function.
    Pass ``member`` when the hash is already known to all nodes."""
    before = net.round
    S, R = tuple(sorted(set(S))), tuple(sorted(set(R)))
    H_S = compute_helpers(net, S, helper_mu(k_S, p_S), top_up=top_up, validate=top_up)
    H_R = compute_helpers(net, R, helper_mu(k_R, p_R), top_up=top_up, validate=top_up)
    max_index = max(1, k_S, k_R)
    codec = LabelCodec(net.n, max_index)
    if member is None:
        drawn, codec = routing_member(net.n, max_index, np.random.default_rng(net.public_seed("route")))
        member = distribute_hash(net, drawn)
    elif member.a < codec.a:
        raise ValueError(f"hash input width {member.a} below label width {codec.a}")
    return RoutingPrep(S, R, p_S, k_S, p_R, k_R, H_S, H_R, member, codec, net.round - before)


class PushProgram(NodeProgram):
    def __init__(self, queue: Sequence[tuple[int, int, tuple]]):
        self.queue = deque(queue)

    def step(self, ctx: NodeContext, local_in: list, global_in: list) -> None:
        if global_in:
            store = ctx.state.setdefault(STORE, {})
            for _, (_, key, payload) in global_in:
                store[key] = payload
        while self.queue and ctx.sends_left > 0:
            target, key, payload = self.queue.popleft()
            ctx.send_global(target, (_PUSH, key, payload))
        if self.queue:
            ctx.wake_next()


class RequestProgram(NodeProgram):
    """Requests go out in odd ticks, answers in even ticks, so a node that is
    both a helper and an intermediate never mixes the two in one inbox. A
    helper keeps at most sigma requests outstanding; intermediates queue
    answers and release sigma per answer tick."""

    def __init__(self, requests: Sequence[tuple[int, int]]):
        self.requests = requests
        self.next = 0
        self.outstanding = 0
        self.got: dict[int, tuple] = {}
        self.answers: deque = deque()

    def step(self, ctx: NodeContext, local_in: list, global_in: list) -> None:
        sigma = ctx.cfg.send_cap
        for sender, msg in global_in:
            if msg[0] == _REQ:
                store = ctx.state.get(STORE, {})
                if msg[2] not in store:
                    raise UnansweredRequest(msg[2], ctx.id)
                self.answers.append((sender, msg[1], store[msg[2]]))
            else:
                self.got[msg[1]] = msg[2]
                self.outstanding -= 1
        if ctx.tick % 2 == 1:
            while self.next < len(self.requests) and self.outstanding < sigma:
                target, key = self.requests[self.next]
                ctx.send_global(target, (_REQ, self.next, key))
                self.next += 1
                self.outstanding += 1
            if self.answers:
                ctx.wake_next()
        else:
            while self.answers and ctx.sends_left > 0:
                sender, handle, payload = self.answers.popleft()
                ctx.send_global(sender, (_ANS, handle, payload))
            if self.answers:
                ctx.wake_at(ctx.tick + 2)
            if self.next < len(self.requests) and self.outstanding < sigma:
                ctx.wake_next()


def _assign(owner_items: Mapping[int, list], helpers: HelperFamily, cap: int, side: str) -> dict[int, list]:
    """Round-robin each owner's items over its sorted helpers."""
    load: dict[int, list] = {}
    for w in sorted(owner_items):
        items = owner_items[w]
        hs = helpers.sets.get(w, ())
        if not hs:
            raise HelperOverload(f"{side} {w} has no helpers")
        per = math.ceil(len(items) / len(hs))
        if per > cap:
            raise HelperOverload(f"{side} {w} would put {per} > {cap} items on one of its {len(hs)} helpers")
        for j, item in enumerate(items):
            load.setdefault(hs[j % len(hs)], []).append(item)
    return load


def routing_scheme(
    net: HybridNetwork,
    prep: RoutingPrep,
    tokens: Iterable,
    tag: int = 0,
    expected: Mapping[int, Iterable[tuple[int, int]]] | None = None,
    prefix: str = "route",
) -> RoutingResult:
    """Route ``tokens`` (Token or (s, r, i, payload)) using a prepared
    instance. Receivers request the labels in ``expected[r]`` (pairs
    (s, i)); by default exactly the labels being sent. Phases are tagged
    ``prefix`` + ".prep", ".push", ".request", ".collect"."""
    before_round = net.round
    before_phases = dict(net.metrics.phase_rounds)
    toks = _normalize(tokens)
    labels = [t.label for t in toks]
    if len(set(labels)) != len(labels):
        raise ValueError("token labels must be unique")
    Sset, Rset = set(prep.S), set(prep.R)
    per_s: dict[int, list[int]] = {}
    per_r: dict[int, list[tuple[int, int]]] = {}
    for j, t in enumerate(toks):
        if t.sender not in Sset:
            raise ValueError(f"sender {t.sender} is not in the sender set")
        if t.receiver not in Rset:
            raise ValueError(f"receiver {t.receiver} is not in the receiver set")
        per_s.setdefault(t.sender, []).append(j)
    if expected is None:
        for t in toks:
            per_r.setdefault(t.receiver, []).append((t.sender, t.index))
    else:
        for r, pairs in expected.items():
            if r not in Rset:
                raise ValueError(f"receiver {r} is not in the receiver set")
            per_r[r] = sorted((int(s), int(i)) for s, i in pairs)
    for s, js in per_s.items():
        if len(js) > prep.k_S:
            raise ValueError(f"sender {s} has {len(js)} > k_S = {prep.k_S} tokens")
    for r, pairs in per_r.items():
        if len(pairs) > prep.k_R:
            raise ValueError(f"receiver {r} expects {len(pairs)} > k_R = {prep.k_R} tokens")
    result = RoutingResult({}, prep, 0)
    if not toks and not per_r:
        return result

    n = net.n
    codec, member = prep.codec, prep.member
    if toks:
        arr = np.array([t.label for t in toks], dtype=np.int64)
        keys = codec.pack_many(arr[:, 0], arr[:, 1], arr[:, 2], tag)
        targets = member.targets(keys, n)
    else:
        keys = targets = np.zeros(0, dtype=np.int64)

    # preparation: tokens to sender helpers, labels to receiver helpers
    for s in per_s:
        per_s[s].sort(key=lambda j: (toks[j].receiver, toks[j].index))
    send_load = _assign(per_s, prep.H_S, math.ceil(prep.k_S / max(1, prep.mu_S)), "sender")
    req_items = {r: [(s, r, i) for s, i in pairs] for r, pairs in per_r.items()}
    req_load = _assign(req_items, prep.H_R, math.ceil(prep.k_R / max(1, prep.mu_R)), "receiver")
    result.max_helper_load = max(
        [math.ceil(len(v) / len(prep.H_S.sets[w])) for w, v in per_s.items()]
        + [math.ceil(len(v) / len(prep.H_R.sets[r])) for r, v in per_r.items()]
        + [0]
    )
    result.max_node_load = max([len(v) for v in send_load.values()] + [len(v) for v in req_load.values()] + [0])
    token_bits = codec.a + 64
    net.local_phase(f"{prefix}.prep", prep.prep_depth, [len(toks) * token_bits] * prep.prep_depth)

    # push, after a barrier telling everyone how long it lasts
    sigma = net.cfg.send_cap
    queues = {
        x: [(int(targets[j]), int(keys[j]), toks[j].payload) for j in js] for x, js in send_load.items()
    }
    push_len = {x: math.ceil(len(q) / sigma) for x, q in queues.items()}
    result.push_rounds = aggregate(net, push_len, max, 0, phase=f"{prefix}.push", key="route.pushlen")
    net.run(lambda v: PushProgram(queues.get(v, ())), f"{prefix}.push", nodes=sorted(queues))

    # request and answer
    req_keys: dict[int, list[tuple[int, int]]] = {}
    req_meta: dict[int, list[tuple[int, int, int]]] = {}
    flat = [item for items in req_load.values() for item in items]
    if flat:
        arr = np.array(flat, dtype=np.int64)
        all_keys = codec.pack_many(arr[:, 0], arr[:, 1], arr[:, 2], tag)
        all_targets = member.targets(all_keys, n)
    pos = 0
    for y, items in req_load.items():
        ks, ts = all_keys[pos : pos + len(items)], all_targets[pos : pos + len(items)]
        pos += len(items)
        req_keys[y] = [(int(t), int(k)) for t, k in zip(ts, ks)]
        req_meta[y] = items
    start = net.round
    progs = net.run(lambda v: RequestProgram(req_keys.get(v, ())), f"{prefix}.request", nodes=sorted(req_keys))
    result.request_rounds = net.round - start
    aggregate(net, {}, max, 0, phase=f"{prefix}.request", key="route.done")

    # collect: receiver helpers bring answers home
    net.local_phase(f"{prefix}.collect", prep.collect_depth, [len(toks) * token_bits] * prep.collect_depth)
    delivered: dict[int, list[Token]] = {}
    for y, items in req_meta.items():
        got = progs[y].got
        for h, (s, r, i) in enumerate(items):
            if h not in got:
                raise MissingToken((s, r, i), f"helper {y} got no answer")
            delivered.setdefault(r, []).append(Token(s, r, i, tuple(got[h])))
    for v in range(1, n + 1):
        net.state[v].pop(STORE, None)
    for r in delivered:
        delivered[r].sort(key=lambda t: (t.sender, t.index))
    result.delivered = delivered
    audit(toks, delivered)
    result.rounds = net.round - before_round
    result.phase_rounds = {
        tag_: r - before_phases.get(tag_, 0)
        for tag_, r in net.metrics.phase_rounds.items()
        if r != before_phases.get(tag_, 0)
    }
    return result


def audit(tokens: Sequence[Token], delivered: Mapping[int, Sequence[Token]]) -> None:
    """Every routed token must reach its receiver with its payload intact."""
    have = {t.label: t.payload for ts in delivered.values() for t in ts}
    for t in tokens:
        if t.label not in have:
            raise MissingToken(t.label)
        if tuple(have[t.label]) != tuple(t.payload):
            raise MissingToken(t.label, "payload corrupted")


def token_routing(
    net: HybridNetwork,
    tokens: Iterable,
    p_S: float,
    k_S: int,
    p_R: float,
    k_R: int,
    S: Iterable[int] | None = None,
    R: Iterable[int] | None = None,
    member: HashFamilyMember | None = None,
    tag: int = 0,
    top_up: bool = True,
) -> RoutingResult:
    """One-shot routing: preparation plus a single instance. S and R default
    to the senders and receivers that occur in ``tokens``."""
    toks = _normalize(tokens)
    S = {t.sender for t in toks} if S is None else set(S)
    R = {t.receiver for t in toks} if R is None else set(R)
    before = net.round
    before_phases = dict(net.metrics.phase_rounds)
    prep = routing_preparation(net, S, R, p_S, k_S, p_R, k_R, member=member, top_up=top_up)
    res = routing_scheme(net, prep, toks, tag=tag)
    res.rounds = net.round - before
    res.phase_rounds = {
        t: r - before_phases.get(t, 0) for t, r in net.metrics.phase_rounds.items() if r != before_phases.get(t, 0)
    }
    return res


__all__ = [
    "HelperOverload",
    "MissingToken",
    "RoutingError",
    "RoutingPrep",
    "RoutingInstance",
    "RoutingResult",
    "UnansweredRequest",
    "audit",
    "distribute_hash",
    "output_bits",
    "routing_independence",
    "routing_preparation",
    "routing_scheme",
    "sample_routing_instance",
    "token_routing",
]


@dataclass
class RoutingInstance:
    n: int
    S: tuple[int, ...]
    R: tuple[int, ...]
    p_S: float
    k_S: int
    p_R: float
    k_R: int
    tokens: list[Token]

    @property
    def workload(self) -> int:
        return len(self.S) * self.k_S + len(self.R) * self.k_R


def sample_routing_instance(n: int, p_S: float, k_S: int, p_R: float, k_R: int, seed: int) -> RoutingInstance:
    """Sampled sender and receiver sets (never empty) and up to k_S tokens
    per sender, receivers drawn so that none gets more than k_R."""
    from .randkit import sample_subset

    def pick(p: float, stream: str) -> tuple[int, ...]:
        flags = sample_subset(n, p, seed, stream)
        chosen = tuple(int(v) + 1 for v in np.nonzero(flags)[0])
        return chosen or (1,)

    S, R = pick(p_S, "route.senders"), pick(p_R, "route.receivers")
    rng = np.random.default_rng([seed, n, 17])
    slots = np.repeat(np.array(R, dtype=np.int64), k_R)
    rng.shuffle(slots)
    tokens: list[Token] = []
    pos = 0
    for s in S:
        for i in range(k_S):
            if pos >= slots.size:
                break
            tokens.append(Token(s, int(slots[pos]), i, (s, i)))
            pos += 1
    return RoutingInstance(n, S, R, p_S, k_S, p_R, k_R, tokens)
