"""Command line front end: gen, run, verify, bench.

Exit status: 0 success, 2 a verification check failed, 3 the simulation
raised (caps, routing, skeleton, clique errors), 4 bad arguments or input.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import distalgs, graphs, oracle
from .ccsim import CliqueDisagreement, PatternViolation
from .engine import EngineError, HybridNetwork, Metrics, SimConfig
from .graphs import INF, Graph, GraphError
from .primitives import PropertyViolation, disseminate
from .routing import RoutingError, sample_routing_instance, token_routing
from .skeleton import EmptySkeleton, NoSkeletonInRange

EXIT_OK, EXIT_FAIL, EXIT_ENGINE, EXIT_ARGS = 0, 2, 3, 4
OUT_ENV = "HYBRIDSIM_OUT"
ALGORITHMS = ("apsp", "sssp", "kssp", "diameter", "route", "disseminate")
ENGINE_ERRORS = (
    EngineError,
    RoutingError,
    PropertyViolation,
    EmptySkeleton,
    NoSkeletonInRange,
    PatternViolation,
    CliqueDisagreement,
)


class UsageError(Exception):
    pass


class MissingColumn(UsageError):
    pass


class GraphMismatch(UsageError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def parse_seeds(text: str) -> list[int]:
    """'3', '1..20', '1,4,9' or a mix like '1..3,7'."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            a, b = int(lo), int(hi)
            if b < a:
                raise UsageError(f"empty seed range {part!r}")
            seeds.extend(range(a, b + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise UsageError("no seeds given")
    return seeds


def parse_ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _gen_graph(spec: str, seed: int) -> Graph:
    """'gnp N P [WMAX]' or 'path N [WMAX]'."""
    parts = spec.split()
    if not parts:
        raise UsageError("empty generator spec")
    kind, args = parts[0], parts[1:]
    try:
        if kind == "gnp" and len(args) in (2, 3):
            return graphs.gen_gnp_connected(int(args[0]), float(args[1]), int(args[2]) if len(args) == 3 else 1, seed)
        if kind == "path" and len(args) in (1, 2):
            return graphs.gen_path(int(args[0]), int(args[1]) if len(args) == 2 else 1, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    raise UsageError(f"unknown generator spec {spec!r}; use 'gnp N P [WMAX]' or 'path N [WMAX]'")


def _read_graph(path: str) -> Graph:
    try:
        return graphs.io_read(Path(path).read_text(), strict=True)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc


def _out_dir(arg: str | None) -> Path:
    out = Path(arg or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args: argparse.Namespace, seed: int, n: int) -> SimConfig:
    cfg = SimConfig(
        send_cap=args.send_cap,
        recv_cap=args.recv_cap,
        message_bits=args.message_bits,
        overflow_policy=args.policy,
        seed=seed,
        send_cap_factor=args.send_cap_factor,
    )
    try:
        cfg.resolve(n)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args: argparse.Namespace) -> int:
    header: dict[str, str] = {}
    try:
        if args.kind == "path":
            g = graphs.gen_path(args.n, args.wmax, args.seed)
        elif args.kind == "gnp":
            if args.p is None:
                raise UsageError("gnp needs --p")
            g = graphs.gen_gnp_connected(args.n, args.p, args.wmax, args.seed)
        elif args.kind == "kssp":
            inst = graphs.gen_kssp_lowerbound(args.path_len, args.k, args.L, args.seed)
            g, header = inst.graph, inst.header()
        else:
            inst = graphs.gen_gamma_diam(args.k, args.ell, args.W, args.a, args.b)
            g, header = inst.graph, inst.header()
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    text = graphs.io_write(g, header)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# run


def _matrix_csv(d: np.ndarray) -> str:
    return oracle.matrix_to_csv(d)


def _pick_sources(n: int, k: int, seed: int) -> list[int]:
    if not (1 <= k <= n):
        raise UsageError(f"need 1 <= k <= n, got k={k}")
    rng = np.random.default_rng([seed, 99])
    return sorted(int(v) + 1 for v in rng.choice(n, size=k, replace=False))


def _run_one(algo: str, g: Graph, net: HybridNetwork, args: argparse.Namespace, seed: int) -> tuple[str, dict]:
    """Returns the result CSV and summary fields."""
    xi = args.xi
    if algo == "apsp":
        res = distalgs.hybrid_apsp(net, xi=xi)
        return _matrix_csv(res.dist), {"skeleton": len(res.skeleton.members), "h": res.skeleton.h}
    if algo == "sssp":
        src = args.source
        if not (1 <= src <= g.n):
            raise UsageError(f"source {src} not in 1..{g.n}")
        res = distalgs.hybrid_sssp(net, src, xi=xi)
        return res.to_csv(), {"skeleton": len(res.skeleton.members), "h": res.skeleton.h}
    if algo == "kssp":
        sources = parse_ints(args.sources) if args.sources else _pick_sources(g.n, args.k or 4, seed)
        if any(not (1 <= s <= g.n) for s in sources):
            raise UsageError("source outside 1..n")
        res = distalgs.hybrid_kssp(net, sources, eta=args.eta, xi=xi)
        return res.to_csv(), {"skeleton": len(res.skeleton.members), "h": res.skeleton.h, "eta": res.eta}
    if algo == "diameter":
        res = distalgs.diam_simulation(net, eta=args.eta, xi=xi)
        return res.to_csv(), {"Dtilde": oracle.format_distance(res.value), "hHat": res.h_hat, "h": res.h, "eta": res.eta}
    if algo == "route":
        k = args.k or 32
        p = args.p if args.p is not None else 1 / 32
        inst = sample_routing_instance(g.n, p, k, p, k, seed)
        res = token_routing(net, inst.tokens, p, k, p, k, S=inst.S, R=inst.R)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sender", "receiver", "index", "payload"])
        for r in sorted(res.delivered):
            for t in res.delivered[r]:
                w.writerow([t.sender, t.receiver, t.index, " ".join(map(str, t.payload))])
        return buf.getvalue(), {"tokens": len(inst.tokens), "muS": res.prep.mu_S, "muR": res.prep.mu_R}
    if algo == "disseminate":
        k = args.k or 16
        rng = np.random.default_rng([seed, 7])
        holders = rng.integers(1, g.n + 1, size=k)
        tokens: dict[int, list] = {}
        for j, v in enumerate(holders):
            tokens.setdefault(int(v), []).append((j, int(rng.integers(0, 1 << 20))))
        got = disseminate(net, tokens)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "tokens"])
        for v in range(1, g.n + 1):
            w.writerow([v, len(net.state[v]["tokens"])])
        return buf.getvalue(), {"tokens": len(got)}
    raise UsageError(f"unknown algorithm {algo!r}")


def cmd_run(args: argparse.Namespace) -> int:
    if (args.graph is None) == (args.gen is None):
        raise UsageError("give exactly one of --graph or --gen")
    seeds = parse_seeds(args.seeds) if args.seeds else [args.seed]
    out = _out_dir(args.out)
    fixed = _read_graph(args.graph) if args.graph else None
    summary_rows = []
    extra_keys: list[str] = []
    for seed in seeds:
        g = fixed if fixed is not None else _gen_graph(args.gen, seed)
        net = HybridNetwork(g, _config(args, seed, g.n))
        result, extra = _run_one(args.algorithm, g, net, args, seed)
        stem = f"{args.algorithm}_seed{seed}"
        (out / f"{stem}.csv").write_text(result)
        (out / f"{stem}_metrics.csv").write_text(net.metrics.to_csv())
        (out / f"{stem}_phases.csv").write_text(net.metrics.phases_csv())
        m = net.metrics
        row = {
            "seed": seed,
            "n": g.n,
            "rounds": m.rounds_elapsed,
            "globalSent": m.global_sent,
            "globalDropped": m.global_dropped,
            "maxRecv": m.max_recv,
            "localBits": m.local_bits,
        }
        row.update(extra)
        extra_keys += [k for k in extra if k not in extra_keys]
        summary_rows.append(row)
    cols = ["seed", "n", "rounds", "globalSent", "globalDropped", "maxRecv", "localBits"] + extra_keys
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in summary_rows:
        w.writerow([row.get(c, "") for c in cols])
    (out / f"{args.algorithm}_summary.csv").write_text(buf.getvalue())
    print(f"{args.algorithm}: {len(seeds)} run(s) written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def _parse_dist(x: str) -> int:
    x = x.strip()
    return INF if x == "inf" else int(x)


def _read_rows(text: str) -> tuple[list[str] | None, list[list[str]]]:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise MissingColumn("results file is empty")
    first = rows[0]
    try:
        [_parse_dist(c) for c in first]
        return None, rows
    except ValueError:
        return first, rows[1:]


def _need(header: list[str], *cols: str) -> list[int]:
    missing = [c for c in cols if c not in header]
    if missing:
        raise MissingColumn(f"results lack column(s): {', '.join(missing)}")
    return [header.index(c) for c in cols]


def verify_text(
    text: str,
    g: Graph,
    exact: bool = False,
    ratio_bound: float | None = None,
    additive: float = 0.0,
    exact_hops: int | None = None,
) -> list[str]:
    """Check a results CSV against oracle truths; returns violation lines."""
    header, rows = _read_rows(text)
    problems: list[str] = []
    if header is None:  # distance matrix, row v holds d(v, .)
        if len(rows) != g.n or any(len(r) != g.n for r in rows):
            raise GraphMismatch(f"matrix is {len(rows)} rows, graph has {g.n} nodes")
        truth = oracle.apsp_oracle(g)
        for v, row in enumerate(rows, start=1):
            for u, cell in enumerate(row, start=1):
                est, d = _parse_dist(cell), int(truth[v - 1, u - 1])
                if est < d:
                    problems.append(f"({v},{u}) underestimates: {cell} < {d}")
                elif est != d:
                    problems.append(f"({v},{u}) is {cell}, expected {d}")
        return problems
    if "Dtilde" in header:
        iv, idt = _need(header, "node", "Dtilde")
        D = oracle.diameter_oracle(g, weighted=False)
        values = set()
        for r in rows:
            v, dt = int(r[iv]), _parse_dist(r[idt])
            if not (1 <= v <= g.n):
                raise GraphMismatch(f"node {v} not in graph")
            values.add(dt)
            if dt < D:
                problems.append(f"node {v}: Dtilde {dt} < D {D}")
            if exact_hops is not None and D <= exact_hops and dt != D:
                problems.append(f"node {v}: Dtilde {dt} != D {D} although D <= {exact_hops}")
            if ratio_bound is not None and dt > ratio_bound * D + additive:
                problems.append(f"node {v}: Dtilde {dt} > {ratio_bound}*{D}+{additive}")
        if len(values) > 1:
            problems.append(f"nodes disagree: {sorted(values)}")
        return problems
    iv, isrc, iest = _need(header, "node", "source", "estimate")
    by_source: dict[int, list[tuple[int, int]]] = {}
    for r in rows:
        v, s = int(r[iv]), int(r[isrc])
        if not (1 <= v <= g.n and 1 <= s <= g.n):
            raise GraphMismatch(f"pair ({v},{s}) outside 1..{g.n}")
        by_source.setdefault(s, []).append((v, _parse_dist(r[iest])))
    for s in sorted(by_source):
        truth = oracle.dijkstra_sssp(g, s)
        hops = oracle.bfs_hops(g, s) if exact_hops is not None else None
        for v, est in by_source[s]:
            d = truth[v - 1]
            if est < d:
                problems.append(f"(v={v},s={s}) underestimates: {est} < {d}")
            elif exact and est != d:
                problems.append(f"(v={v},s={s}) is {est}, expected {d}")
            elif hops is not None and hops[v - 1] <= exact_hops and est != d:
                problems.append(f"(v={v},s={s}) within {exact_hops} hops but {est} != {d}")
            elif ratio_bound is not None and est > ratio_bound * d + additive:
                problems.append(f"(v={v},s={s}) ratio {est / max(d, 1):.4f} > {ratio_bound}")
    return problems


def cmd_verify(args: argparse.Namespace) -> int:
    g = _read_graph(args.graph)
    try:
        text = Path(args.results).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {args.results}: {exc.strerror}") from exc
    problems = verify_text(text, g, args.exact, args.ratio_bound, args.additive, args.exact_hops)
    if problems:
        print(f"FAIL: {len(problems)} violation(s)")
        for line in problems[: args.max_report]:
            print("  " + line)
        return EXIT_FAIL
    print("PASS")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


ROUTING_PHASES = ("route.prep", "route.push", "route.request", "route.collect")


def fit_exponent(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def bench_route(n: int, ks: Sequence[int], senders: int, seeds: Sequence[int], avg_deg: float = 3.0):
    """Rows (k, seed, phase, rounds) and the fitted exponent of the routing
    phases' total against k."""
    p = min(1.0, senders / n)
    rows = []
    totals: dict[int, list[int]] = {}
    for seed in seeds:
        g = graphs.gen_gnp_connected(n, min(1.0, avg_deg / n), 1, seed)
        for k in ks:
            inst = sample_routing_instance(n, p, k, p, k, seed)
            net = HybridNetwork(g, SimConfig(seed=seed))
            res = token_routing(net, inst.tokens, p, k, p, k, S=inst.S, R=inst.R)
            for phase, r in res.phase_rounds.items():
                rows.append((k, seed, phase, r))
            totals.setdefault(k, []).append(sum(res.phase_rounds.get(ph, 0) for ph in ROUTING_PHASES))
    means = [float(np.mean(totals[k])) for k in ks]
    return rows, fit_exponent(ks, means) if len(ks) > 1 else float("nan")


def bench_apsp(ns: Sequence[int], seeds: Sequence[int], p: float, wmax: int, xi: float):
    rows = []
    for n in ns:
        for seed in seeds:
            g = graphs.gen_gnp_connected(n, p, wmax, seed)
            net = HybridNetwork(g, SimConfig(seed=seed))
            distalgs.hybrid_apsp(net, xi=xi)
            for phase, r in net.metrics.phase_rounds.items():
                rows.append((n, seed, phase, r))
    return rows


def cmd_bench(args: argparse.Namespace) -> int:
    seeds = parse_seeds(args.seeds)
    out = _out_dir(args.out)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if args.target == "route":
        ks = parse_ints(args.k)
        rows, slope = bench_route(args.n, ks, args.senders, seeds)
        w.writerow(["k", "seed", "phase", "rounds"])
        w.writerows(rows)
        print(f"route: fitted exponent of routing rounds vs k = {slope:.3f}")
    else:
        ns = parse_ints(args.ns)
        rows = bench_apsp(ns, seeds, args.p, args.wmax, args.xi)
        w.writerow(["n", "seed", "phase", "rounds"])
        w.writerows(rows)
    path = out / f"bench_{args.target}.csv"
    path.write_text(buf.getvalue())
    print(f"{len(rows)} rows written to {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hybridsim", description="Hybrid-network shortest-path simulator")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate an instance file")
    g.add_argument("kind", choices=("path", "gnp", "kssp", "gamma"))
    g.add_argument("--n", type=int, default=16)
    g.add_argument("--p", type=float)
    g.add_argument("--wmax", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--path-len", type=int, default=16)
    g.add_argument("--k", type=int, default=2)
    g.add_argument("--L", type=int)
    g.add_argument("--ell", type=int, default=2)
    g.add_argument("--W", type=int, default=1)
    g.add_argument("--a", default="zeros")
    g.add_argument("--b", default="zeros")
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an algorithm and write result/metrics CSVs")
    r.add_argument("algorithm", choices=ALGORITHMS)
    r.add_argument("--graph")
    r.add_argument("--gen", help="'gnp N P [WMAX]' or 'path N [WMAX]', seeded per run")
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--seeds", help="e.g. 1..20 or 1,3,5")
    r.add_argument("--xi", type=float, default=16.0)
    r.add_argument("--eta", type=float)
    r.add_argument("--source", type=int, default=1)
    r.add_argument("--sources", help="comma separated source IDs (kssp)")
    r.add_argument("--k", type=int, help="sources (kssp), tokens per node (route), tokens (disseminate)")
    r.add_argument("--p", type=float, help="sampling probability (route)")
    r.add_argument("--send-cap", type=int)
    r.add_argument("--recv-cap", type=int)
    r.add_argument("--send-cap-factor", type=int, default=1)
    r.add_argument("--message-bits", type=int)
    r.add_argument("--policy", choices=("fail", "dropRandom"), default="fail")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="check results against oracle distances")
    v.add_argument("results")
    v.add_argument("graph")
    v.add_argument("--exact", action="store_true", help="require estimate == distance")
    v.add_argument("--ratio-bound", type=float)
    v.add_argument("--additive", type=float, default=0.0)
    v.add_argument("--exact-hops", type=int, help="require exactness within this many hops")
    v.add_argument("--max-report", type=int, default=50)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="sweep and record per-phase round counts")
    b.add_argument("target", choices=("route", "apsp"))
    b.add_argument("--n", type=int, default=4096)
    b.add_argument("--k", default="16,64,256")
    b.add_argument("--senders", type=int, default=64)
    b.add_argument("--ns", default="256,1024")
    b.add_argument("--p", type=float, default=0.05)
    b.add_argument("--wmax", type=int, default=8)
    b.add_argument("--xi", type=float, default=16.0)
    b.add_argument("--seeds", default="1")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except ENGINE_ERRORS as exc:
        print(f"simulation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except distalgs.TooManySources as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
