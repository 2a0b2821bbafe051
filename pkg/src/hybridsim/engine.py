"""Round-synchronous execution of the HYBRID model.

Local edges carry payloads of any size; the global network lets every node
send at most ``send_cap`` and receive at most ``recv_cap`` messages per round.

A run advances in ticks. In tick t every node that has mail, asked to be
woken, or is starting up executes ``step``; whatever it sends arrives at the
start of tick t+1. The rounds a run consumes equal the last tick in which
anything was sent, so trailing bookkeeping ticks cost nothing. Idle stretches
with nothing in flight are skipped straight to the next wake-up.
"""
from __future__ import annotations

import csv
import io
from collections import abc, defaultdict
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .graphs import Graph
from .randkit import ceil_log2


class EngineError(RuntimeError):
    pass


class GlobalSendCapExceeded(EngineError):
    def __init__(self, node: int, round: int, cap: int):
        self.node, self.round = node, round
        super().__init__(f"node {node} exceeded global send cap {cap} in round {round}")


class ReceiveOverflow(EngineError):
    def __init__(self, node: int, round: int, count: int, cap: int):
        self.node, self.round, self.count = node, round, count
        super().__init__(f"node {node} received {count} > {cap} global messages in round {round}")


class MaxRoundsExceeded(EngineError):
    pass


class InvalidTarget(EngineError):
    def __init__(self, target: Any, detail: str = ""):
        self.target = target
        super().__init__(f"invalid target {target!r}{': ' + detail if detail else ''}")


class MessageTooLarge(EngineError):
    pass


POLICIES = ("fail", "dropRandom")


@dataclass(frozen=True)
class SimConfig:
    send_cap: int | None = None
    recv_cap: int | None = None
    message_bits: int | None = None
    overflow_policy: str = "fail"
    seed: int = 0
    max_rounds: int = 50_000_000
    send_cap_factor: int = 1

    def resolve(self, n: int) -> "SimConfig":
        """Fill defaults for an n-node network and validate."""
        lg = max(1, ceil_log2(n))
        sigma = self.send_cap if self.send_cap is not None else self.send_cap_factor * lg
        rho = self.recv_cap if self.recv_cap is not None else 4 * sigma
        bits = self.message_bits if self.message_bits is not None else max(64, 16 * lg)
        cfg = replace(self, send_cap=int(sigma), recv_cap=int(rho), message_bits=int(bits))
        if cfg.send_cap < 1:
            raise ValueError("send cap must be at least 1")
        if cfg.recv_cap < 2 * cfg.send_cap:
            raise ValueError("receive cap must be at least twice the send cap")
        if cfg.message_bits < 3 * lg:
            raise ValueError("message size must fit a (sender, receiver, index) label")
        if cfg.overflow_policy not in POLICIES:
            raise ValueError(f"overflow policy must be one of {POLICIES}")
        return cfg


def payload_bits(p: Any) -> int:
    """Size estimate used for accounting: integers by bit length, containers
    as the sum of their parts."""
    t = type(p)
    if t is int:
        return max(1, p.bit_length() + (p < 0))
    if t is tuple or t is list:
        return sum(payload_bits(x) for x in p)
    if p is None or t is bool:
        return 1
    if isinstance(p, (int, np.integer)):
        return max(1, int(p).bit_length() + (1 if p < 0 else 0))
    if isinstance(p, (float, np.floating)):
        return 64
    if isinstance(p, (str, bytes)):
        return 8 * len(p)
    if isinstance(p, abc.Mapping):
        return sum(payload_bits(k) + payload_bits(v) for k, v in p.items())
    if isinstance(p, np.ndarray):
        return 64 * int(p.size)
    if isinstance(p, abc.Iterable):
        return sum(payload_bits(x) for x in p)
    return 64


@dataclass
class RoundRow:
    round: int
    phase: str
    global_sent: int = 0
    global_dropped: int = 0
    max_recv: int = 0
    local_bits: int = 0


@dataclass(frozen=True)
class MetricsSnapshot:
    rounds_elapsed: int
    global_sent: int
    global_dropped: int
    max_recv: int
    local_bits: int
    phase_rounds: tuple[tuple[str, int], ...]


@dataclass
class Metrics:
    rounds_elapsed: int = 0
    global_sent: int = 0
    global_dropped: int = 0
    max_recv: int = 0
    local_bits: int = 0
    phase_rounds: dict[str, int] = field(default_factory=dict)
    rows: list[RoundRow] = field(default_factory=list)

    def add_row(self, row: RoundRow) -> None:
        self.rows.append(row)
        self.rounds_elapsed = max(self.rounds_elapsed, row.round)
        self.global_sent += row.global_sent
        self.global_dropped += row.global_dropped
        self.max_recv = max(self.max_recv, row.max_recv)
        self.local_bits += row.local_bits

    def add_phase(self, tag: str, rounds: int) -> None:
        self.phase_rounds[tag] = self.phase_rounds.get(tag, 0) + rounds

    def snapshot(self) -> MetricsSnapshot:
        return MetricsSnapshot(
            self.rounds_elapsed,
            self.global_sent,
            self.global_dropped,
            self.max_recv,
            self.local_bits,
            tuple(self.phase_rounds.items()),
        )

    def rounds_in(self, *prefixes: str) -> int:
        return sum(r for tag, r in self.phase_rounds.items() if tag.startswith(prefixes))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "phaseTag", "globalSent", "globalDropped", "maxRecv", "localBits"])
        for r in self.rows:
            w.writerow([r.round, r.phase, r.global_sent, r.global_dropped, r.max_recv, r.local_bits])
        return buf.getvalue()

    def phases_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phaseTag", "rounds"])
        for tag, r in self.phase_rounds.items():
            w.writerow([tag, r])
        return buf.getvalue()


class NodeProgram:
    """Per-node state machine. ``step`` is called with the local and global
    messages delivered this tick, each a list of (sender, payload) sorted by
    sender then payload."""

    def step(self, ctx: "NodeContext", local_in: list, global_in: list) -> None:  # pragma: no cover
        raise NotImplementedError


class NodeContext:
    __slots__ = ("id", "net", "state", "tick", "_global_sent", "_run")

    def __init__(self, net: "HybridNetwork", v: int, run: "_Run"):
        self.id = v
        self.net = net
        self.state = net.state[v]
        self.tick = 0
        self._global_sent = 0
        self._run = run

    @property
    def n(self) -> int:
        return self.net.n

    @property
    def round(self) -> int:
        return self.net.round + self.tick

    @property
    def neighbors(self) -> dict[int, int]:
        return self.net.g.adj[self.id]

    @property
    def cfg(self) -> SimConfig:
        return self.net.cfg

    @property
    def rng(self) -> np.random.Generator:
        return self.net.node_rng(self.id)

    @property
    def sends_left(self) -> int:
        return self.net.cfg.send_cap - self._global_sent

    def send_local(self, nbr: int, payload: Any) -> None:
        if nbr not in self.net.g.adj[self.id]:
            raise InvalidTarget(nbr, f"not a neighbour of {self.id}")
        self._run.out_local.append((nbr, self.id, payload))

    def send_global(self, target: int, payload: Any) -> None:
        if not isinstance(target, (int, np.integer)) or not (1 <= target <= self.net.n):
            raise InvalidTarget(target, f"IDs are 1..{self.net.n}")
        self._global_sent += 1
        if self._global_sent > self.net.cfg.send_cap:
            raise GlobalSendCapExceeded(self.id, self.round, self.net.cfg.send_cap)
        if self._run.check_bits and payload_bits(payload) > self.net.cfg.message_bits:
            raise MessageTooLarge(f"node {self.id} payload of {payload_bits(payload)} bits in round {self.round}")
        self._run.out_global[int(target)].append((self.id, payload))

    def wake_at(self, tick: int) -> None:
        """Ask to be stepped at the given tick of the current run."""
        if tick <= self.tick:
            raise ValueError("can only wake in the future")
        self._run.wakes[tick].add(self.id)

    def wake_next(self) -> None:
        self.wake_at(self.tick + 1)


def _inbox_key(item: tuple[int, Any]) -> tuple[int, str]:
    return item[0], repr(item[1])


def enforce_caps(
    outbox: Mapping[int, list], cfg: SimConfig, round: int, rng_seed: int = 0
) -> tuple[dict[int, list], list[tuple[int, int, Any]]]:
    """Apply the receive cap to one round of global traffic.

    Returns the delivered inboxes (canonically sorted) and the dropped
    messages as (receiver, sender, payload)."""
    delivered: dict[int, list] = {}
    dropped: list[tuple[int, int, Any]] = []
    cap = cfg.recv_cap
    for dst in sorted(outbox):
        msgs = sorted(outbox[dst], key=_inbox_key)
        if len(msgs) > cap:
            if cfg.overflow_policy == "fail":
                raise ReceiveOverflow(dst, round, len(msgs), cap)
            rng = np.random.default_rng([rng_seed, round, dst])
            keep = set(rng.choice(len(msgs), size=cap, replace=False).tolist())
            dropped += [(dst, s, p) for j, (s, p) in enumerate(msgs) if j not in keep]
            msgs = [m for j, m in enumerate(msgs) if j in keep]
        delivered[dst] = msgs
    return delivered, dropped


@dataclass
class _Run:
    out_local: list = field(default_factory=list)
    out_global: dict = field(default_factory=lambda: defaultdict(list))
    wakes: dict = field(default_factory=lambda: defaultdict(set))
    check_bits: bool = True


class HybridNetwork:
    """A graph plus configuration, per-node persistent state, randomness and
    accumulated metrics. Algorithms run as a sequence of phases on it."""

    def __init__(self, g: Graph, cfg: SimConfig | None = None, check_bits: bool = True):
        self.g = g
        self.n = g.n
        self.cfg = (cfg or SimConfig()).resolve(g.n)
        self.round = 0
        self.metrics = Metrics()
        self.state: list[dict] = [dict() for _ in range(g.n + 1)]
        self._rngs: dict[int, np.random.Generator] = {}
        self.check_bits = check_bits
        self._public_calls = 0

    def node_rng(self, v: int) -> np.random.Generator:
        rng = self._rngs.get(v)
        if rng is None:
            rng = np.random.default_rng([self.cfg.seed & (2**63 - 1), v])
            self._rngs[v] = rng
        return rng

    def public_seed(self, purpose: str) -> int:
        """Seed for randomness that a designated node draws and then makes
        public (the cost of publishing is charged by the caller)."""
        self._public_calls += 1
        return int(self.node_rng(1).integers(0, 2**62))

    # -- local phases executed by vectorised kernels ---------------------
    def local_phase(self, tag: str, rounds: int, bits: Iterable[int] | None = None) -> None:
        """Account for ``rounds`` rounds of purely local communication whose
        effect was computed by a kernel. ``bits`` optionally lists local bits
        moved per round."""
        rounds = int(rounds)
        if rounds <= 0:
            return
        if self.round + rounds > self.cfg.max_rounds:
            raise MaxRoundsExceeded(f"would exceed {self.cfg.max_rounds} rounds")
        per = list(bits or [])
        for t in range(rounds):
            b = int(per[t]) if t < len(per) else 0
            self.metrics.add_row(RoundRow(self.round + t + 1, tag, local_bits=b))
        self.round += rounds
        self.metrics.add_phase(tag, rounds)

    # -- message-level execution -----------------------------------------
    def run(
        self,
        programs: Mapping[int, NodeProgram] | Callable[[int], NodeProgram],
        phase: str = "run",
        nodes: Iterable[int] | None = None,
    ) -> dict[int, NodeProgram]:
        """Execute node programs until nothing is in flight and nobody is
        waiting. ``programs`` is a mapping or a factory called per node; with
        ``nodes`` given, only those nodes start in tick 1 (others are
        created lazily when they first receive mail)."""
        factory = programs if callable(programs) else None
        progs: dict[int, NodeProgram] = {} if factory else dict(programs)
        if not factory and set(progs) - set(range(1, self.n + 1)):
            raise InvalidTarget(sorted(set(progs) - set(range(1, self.n + 1)))[0], "no such node")
        run = _Run(check_bits=self.check_bits)
        ctxs: dict[int, NodeContext] = {}

        def get(v: int) -> tuple[NodeProgram | None, NodeContext]:
            if v not in progs and factory is not None:
                progs[v] = factory(v)
            ctx = ctxs.get(v)
            if ctx is None:
                ctx = ctxs[v] = NodeContext(self, v, run)
            return progs.get(v), ctx

        if nodes is not None:
            start = sorted(nodes)
        elif factory is not None:
            start = list(range(1, self.n + 1))
        else:
            start = sorted(progs)
        local_in: dict[int, list] = {}
        global_in: dict[int, list] = {}
        tick = 0
        last_send = 0
        pending_rows: list[RoundRow] = []
        while True:
            if tick == 0:
                tick = 1
                active = set(start)
            else:
                nxt = tick + 1
                if not local_in and not global_in:
                    future = [t for t, s in run.wakes.items() if t >= nxt and s]
                    if not future:
                        break
                    nxt = min(future)
                tick = nxt
                active = set(local_in) | set(global_in) | run.wakes.pop(tick, set())
            if self.round + tick > self.cfg.max_rounds:
                raise MaxRoundsExceeded(f"phase {phase!r} passed {self.cfg.max_rounds} rounds")
            run.out_local = []
            run.out_global = defaultdict(list)
            for v in sorted(active):
                prog, ctx = get(v)
                if prog is None:
                    continue
                ctx.tick = tick
                ctx._global_sent = 0
                lin = sorted(local_in.get(v, ()), key=_inbox_key)
                gin = global_in.get(v, [])
                prog.step(ctx, lin, gin)
            sent = sum(len(x) for x in run.out_global.values())
            local_bits = 0
            new_local: dict[int, list] = defaultdict(list)
            for dst, src, payload in run.out_local:
                new_local[dst].append((src, payload))
                local_bits += payload_bits(payload)
            delivered, dropped = enforce_caps(run.out_global, self.cfg, self.round + tick, self.cfg.seed)
            local_in = dict(new_local)
            global_in = {k: v for k, v in delivered.items() if v}
            if sent or run.out_local:
                max_recv = max((len(v) for v in delivered.values()), default=0)
                pending_rows.append(
                    RoundRow(self.round + tick, phase, sent, len(dropped), max_recv, local_bits)
                )
                last_send = tick
        # materialise one row per round, including idle rounds in between
        by_round = {r.round: r for r in pending_rows}
        for t in range(1, last_send + 1):
            r = self.round + t
            self.metrics.add_row(by_round.get(r, RoundRow(r, phase)))
        self.round += last_send
        self.metrics.add_phase(phase, last_send)
        return progs


def run(
    g: Graph,
    programs: Mapping[int, NodeProgram] | Callable[[int], NodeProgram],
    cfg: SimConfig | None = None,
    phase: str = "run",
) -> tuple[dict[int, dict], Metrics]:
    """Run one set of node programs on a fresh network; returns each node's
    state dict and the metrics."""
    net = HybridNetwork(g, cfg)
    net.run(programs, phase)
    return {v: net.state[v] for v in range(1, g.n + 1)}, net.metrics


def metrics_snapshot(net: HybridNetwork) -> MetricsSnapshot:
    return net.metrics.snapshot()
