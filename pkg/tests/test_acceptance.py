"""Acceptance criteria, one test each. Every test records a PASS/FAIL line;
the lines are printed at the end of the pytest run (see conftest) and also
when this file is executed directly."""
from __future__ import annotations

import itertools
import math
import sys

import numpy as np
import pytest
from scipy import stats

from hybridsim.ccsim import FULL_EXCHANGE_APSP, CCAlgoSpec
from hybridsim.cli import ROUTING_PHASES, fit_exponent
from hybridsim.distalgs import (
    diam_simulation,
    fold_additive,
    hybrid_apsp,
    hybrid_kssp,
    hybrid_sssp,
    ratio_bound_unweighted,
    ratio_bound_weighted,
    x_from_delta,
)
from hybridsim.engine import HybridNetwork, SimConfig
from hybridsim.graphs import gen_gamma_diam, gen_gnp_connected, io_write
from hybridsim.oracle import apsp_oracle, diameter_oracle, dijkstra_sssp, hop_limited_from
from hybridsim.primitives import compute_helpers, helper_mu, multiplicity_bound
from hybridsim.randkit import family_new, random_member, sample_subset
from hybridsim.routing import sample_routing_instance, token_routing
from hybridsim.skeleton import compute_skeleton, validate_skeleton

RESULTS: dict[int, str] = {}


def record(num: int, title: str, ok: bool, detail: str) -> None:
    RESULTS[num] = f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}"
    assert ok, RESULTS[num]


def net_for(g, seed):
    return HybridNetwork(g, SimConfig(seed=seed))


def premise_pairs(g, sk, reps, sources, truth):
    """Pairs (i, v) whose ratio premise the sampled skeleton meets: a node u
    with d_h(v, u) + d(u, s) = d(v, s) whose skeleton distance to r_s is
    exact, and d_h(s, r_s) <= d(v, s). Computed from the oracles only."""
    dh = np.array([hop_limited_from(g, u, sk.h) for u in sk.members], dtype=np.int64)
    d_us = np.array([dijkstra_sssp(g, u) for u in sk.members], dtype=np.int64)
    d_S = sk.distances()
    idx = sk.index
    src_cols = np.array(sources) - 1
    rep_rows = [idx[reps.rep(s)] for s in sources]
    ok = np.zeros(truth.shape, dtype=bool)
    for j, u in enumerate(sk.members):
        # via[i, v] = d_h(v, u_j) + d(u_j, s_i)
        via = dh[j][None, :] + d_us[j, src_cols][:, None]
        faithful = np.array([d_S[j, r] == d_us[j, sk.members[r] - 1] for r in rep_rows])
        ok |= (via == truth) & faithful[:, None]
    d_rep = np.array([reps.dist(s) for s in sources])[:, None]
    return ok & (d_rep <= truth)


# ---------------------------------------------------------------------------


def test_c01_apsp_exact():
    bad, checked = [], 0
    for n, p in ((256, 0.05), (512, 0.02)):
        for seed in range(1, 21):
            g = gen_gnp_connected(n, p, 8, seed)
            res = hybrid_apsp(net_for(g, seed))
            checked += n * n
            wrong = int((res.dist != apsp_oracle(g)).sum())
            if wrong:
                bad.append((n, seed, wrong))
    record(1, "APSP exactness", not bad, f"{checked} entries over 40 runs, mismatching runs {bad}")


def test_c02_sssp_exact():
    bad = []
    for seed in range(1, 21):
        g = gen_gnp_connected(512, 0.05, 8, seed)
        src = 1 + seed * 7 % 512
        res = hybrid_sssp(net_for(g, seed), src)
        if res.estimates[0].tolist() != dijkstra_sssp(g, src):
            bad.append(seed)
    record(2, "SSSP exactness", not bad, f"20 seeds on G(512,0.05,8), failing seeds {bad}")


def _kssp_run(g, seed, k, eta, xi):
    rng = np.random.default_rng([seed, k])
    srcs = sorted(int(v) + 1 for v in rng.choice(g.n, size=k, replace=False))
    res = hybrid_kssp(net_for(g, seed), srcs, eta=eta, xi=xi)
    truth = apsp_oracle(g, srcs)
    return srcs, res, truth


def within_reach(g, srcs, truth, limit):
    """True where some shortest v-s path uses at most ``limit`` hops."""
    limit = min(int(limit), g.n)
    local = np.array([hop_limited_from(g, s, limit) for s in srcs], dtype=np.int64)
    return local == truth


def test_c03_kssp_ratio():
    w_bound = ratio_bound_weighted(FULL_EXCHANGE_APSP)
    u_bound = ratio_bound_unweighted(FULL_EXCHANGE_APSP, eta=4)
    problems, pairs, far_pairs, premise = [], 0, 0, 0
    for seed in range(1, 11):
        gw = gen_gnp_connected(512, 0.02, 8, seed)
        gu = gen_gnp_connected(512, 0.02, 1, seed)
        for k in (4, 16):
            # default xi: every pair is within eta*h hops
            for g, eta, bound in ((gw, 1.0, w_bound), (gu, 4.0, u_bound)):
                srcs, res, truth = _kssp_run(g, seed, k, eta, 16.0)
                est = res.estimates
                pairs += est.size
                if (est < truth).any() or (est > bound * truth).any():
                    problems.append(("ratio", seed, k, eta))
                close = within_reach(g, srcs, truth, eta * res.skeleton.h)
                if (est[close] != truth[close]).any():
                    problems.append(("exact", seed, k, eta))
            # small radius: the skeleton branch decides far pairs; the ratio
            # bound is audited on every pair whose premise the sample meets
            for g, eta, bound in ((gw, 1.0, w_bound), (gu, 4.0, u_bound)):
                srcs, res, truth = _kssp_run(g, seed, k, eta, 0.01)
                est = res.estimates
                if (est < truth).any():
                    problems.append(("under/small", seed, k, eta))
                close = within_reach(g, srcs, truth, eta * res.skeleton.h)
                if (est[close] != truth[close]).any():
                    problems.append(("exact/small", seed, k, eta))
                far = ~close
                far_pairs += int(far.sum())
                ok = premise_pairs(g, res.skeleton, res.reps, srcs, truth) & far
                premise += int(ok.sum())
                if (est[ok] > bound * truth[ok]).any():
                    problems.append(("ratio/small", seed, k, eta))
    record(
        3,
        "k-SSP ratio contract",
        not problems,
        f"{pairs} pairs at default xi; small-xi run audited {premise} of {far_pairs} far pairs meeting the premise; problems {problems[:5]}",
    )


def test_c04_diameter():
    problems, far = [], 0
    for seed in range(1, 21):
        g = gen_gnp_connected(512, 0.02, 1, seed)
        D = diameter_oracle(g, weighted=False)
        for xi in (16.0, 0.01):
            est = diam_simulation(net_for(g, seed), xi=xi)
            v, eta, h = est.value, est.eta, est.h
            if len(set(est.per_node)) != 1:
                problems.append(("agree", seed, xi))
            if v < D:
                problems.append(("under", seed, xi))
            if D <= eta * h and v != D:
                problems.append(("exact", seed, xi))
            if D > eta * h:
                far += 1
                if v > (1 + 2 / eta) * D + 2 * h:
                    problems.append(("bound", seed, xi))
    record(4, "Diameter contract", not problems, f"40 runs ({far} on the skeleton branch), problems {problems[:5]}")


def test_c05_routing_delivery():
    problems, tokens, worst = [], 0, 0
    for n in (256, 1024):
        for seed in range(1, 21):
            g = gen_gnp_connected(n, 3 / n, 1, seed)
            inst = sample_routing_instance(n, 1 / 32, 32, 1 / 32, 32, seed)
            net = net_for(g, seed)
            res = token_routing(net, inst.tokens, 1 / 32, 32, 1 / 32, 32, S=inst.S, R=inst.R)
            want = sorted((t.label, t.payload) for t in inst.tokens)
            got = sorted((t.label, tuple(t.payload)) for ts in res.delivered.values() for t in ts)
            tokens += len(want)
            worst = max(worst, net.metrics.max_recv / net.cfg.recv_cap)
            if got != want or net.metrics.global_dropped or net.metrics.max_recv > net.cfg.recv_cap:
                problems.append((n, seed))
            if net.cfg.recv_cap != 4 * net.cfg.send_cap or net.cfg.overflow_policy != "fail":
                problems.append(("config", n, seed))
    record(5, "Routing delivery and cap safety", not problems,
           f"{tokens} tokens over 40 runs, peak receive load {worst:.2f} of rho, problems {problems}")


def test_c06_routing_sqrt_k():
    n, ks, seeds = 4096, (16, 64, 256), (1, 2, 3)
    totals = {k: [] for k in ks}
    for seed in seeds:
        g = gen_gnp_connected(n, 3 / n, 1, seed)
        for k in ks:
            inst = sample_routing_instance(n, 1 / 64, k, 1 / 64, k, seed)
            res = token_routing(net_for(g, seed), inst.tokens, 1 / 64, k, 1 / 64, k, S=inst.S, R=inst.R)
            totals[k].append(sum(res.phase_rounds.get(p, 0) for p in ROUTING_PHASES))
    means = [float(np.mean(totals[k])) for k in ks]
    slope = fit_exponent(ks, means)
    record(6, "Routing sqrt(k) scaling", 0.35 <= slope <= 0.65,
           f"mean rounds {dict(zip(ks, [round(m) for m in means]))}, fitted exponent {slope:.3f}")


def test_c07_helper_properties():
    configs = ((1024, 1 / 32, 64), (512, 1 / 16, 16))
    problems, recruited = [], 0
    for n, p, k in configs:
        for seed in range(1, 21):
            g = gen_gnp_connected(n, 3 / n, 1, seed)
            W = [int(v) + 1 for v in np.nonzero(sample_subset(n, p, seed, "helpers.W"))[0]]
            fam = compute_helpers(net_for(g, seed), W, helper_mu(k, p), validate=False)
            recruited += fam.recruited
            issues = fam.validate(g)
            if fam.multiplicity() and max(fam.multiplicity().values()) > multiplicity_bound(n):
                issues.append("multiplicity")
            if issues:
                problems.append((n, seed, issues[:2]))
    record(7, "Helper-set properties", not problems,
           f"40 families, {recruited} members added by top-up, problems {problems[:3]}")


def test_c08_skeleton_fidelity():
    problems, pairs = [], 0
    for x in (0.5, 2 / 3):
        for seed in range(1, 21):
            g = gen_gnp_connected(1024, 3 / 1024, 4, seed)
            sk = compute_skeleton(net_for(g, seed), x, 16.0)
            rep = validate_skeleton(sk, g, sample_pairs=40, seed=seed)
            pairs += len(sk.members) * (len(sk.members) - 1) // 2
            if not rep.ok:
                problems.append((round(x, 3), seed, rep.lines()[:2]))
    record(8, "Skeleton fidelity", not problems, f"{pairs} skeleton pairs over 40 runs, problems {problems[:3]}")


def test_c09_gamma_dichotomy():
    wrong, count = [], 0
    strings = list(itertools.product((0, 1), repeat=4))
    for ell in (2, 3):
        for a in strings:
            for b in strings:
                count += 1
                w = gen_gamma_diam(2, ell, 10, a, b)
                dw = diameter_oracle(w.graph)
                if (w.disjoint and dw > 10 + 2 * ell) or (not w.disjoint and dw < 20 + ell):
                    wrong.append(("W", ell, a, b))
                u = gen_gamma_diam(2, ell, 1, a, b)
                du = diameter_oracle(u.graph, weighted=False)
                if du != (ell + 1 if u.disjoint else ell + 2):
                    wrong.append(("1", ell, a, b))
    record(9, "Gamma dichotomy", not wrong, f"{count} (a,b,ell) cases, exceptions {wrong[:3]}")


def test_c10_hash_independence():
    problems = []
    for w in (1, 2):
        keys = range(1 << w)
        for x, y in itertools.combinations(keys, 2):
            counts: dict = {}
            for bits in itertools.product("01", repeat=2 * w):
                h = family_new(w, w, 2, "".join(bits))
                counts[(h(x), h(y))] = counts.get((h(x), h(y)), 0) + 1
            if len(counts) != 1 << (2 * w) or len(set(counts.values())) != 1:
                problems.append((w, x, y))
    rng = np.random.default_rng(2024)
    keys = rng.integers(0, 256, 10_000)
    out = [random_member(8, 8, 16, rng)(int(x)) % 16 for x in keys]
    pval = float(stats.chisquare(np.bincount(out, minlength=16)).pvalue)
    if pval <= 0.001:
        problems.append(("chi2", pval))
    record(10, "Hash-family independence", not problems, f"exhaustive pairs ok={not problems}, chi-square p={pval:.3f}")


def test_c11_framework_arithmetic():
    eps, h = 0.05, 40
    exact_cc = CCAlgoSpec(gamma_src=1.0, delta=0.0, alpha_mul=1 + eps)
    # a (2+eps, (1+eps)w) clique algorithm, additive part folded in
    folded = CCAlgoSpec(gamma_src=1.0, delta=1.0, alpha_mul=fold_additive(2 + eps, 1 + eps))
    # diameter: alpha = 3/2+eps, eta = 1/eps, additive h against T = eta*h
    diam = CCAlgoSpec(gamma_src=1.0, delta=0.0, eta=1 / eps, alpha_mul=1.5 + eps, beta_add=h)
    checks = {
        "delta=0 gives x=2/3": math.isclose(x_from_delta(0), 2 / 3),
        "weighted 3+2eps": math.isclose(ratio_bound_weighted(exact_cc), 3 + 2 * eps),
        "folded weighted 7+4eps": math.isclose(ratio_bound_weighted(folded), 7 + 4 * eps),
        "diameter 3/2+4eps": math.isclose(ratio_bound_unweighted(diam, t_b=diam.eta * h), 1.5 + 4 * eps),
        "delta=0.15715 gives 1-x=0.397": abs((1 - x_from_delta(0.15715)) - 0.397) < 5e-4,
        "reference program bound 3": ratio_bound_weighted(FULL_EXCHANGE_APSP) == 3,
    }
    failed = [k for k, v in checks.items() if not v]
    record(11, "Framework arithmetic", not failed, f"{len(checks) - len(failed)}/{len(checks)} identities, failed {failed}")


def test_c12_determinism():
    from hybridsim.primitives import disseminate

    g = gen_gnp_connected(128, 0.05, 6, 3)
    gu = gen_gnp_connected(128, 0.05, 1, 3)
    pipelines = {
        "apsp": lambda net: hybrid_apsp(net).to_csv(),
        "sssp": lambda net: hybrid_sssp(net, 4).to_csv(),
        "kssp": lambda net: hybrid_kssp(net, [1, 9, 50], xi=0.05).to_csv(),
        "diameter": lambda net: diam_simulation(net, xi=0.05).to_csv(),
        "route": lambda net: repr(sorted(
            (r, [t.label for t in ts])
            for r, ts in token_routing(net, sample_routing_instance(128, 1 / 8, 4, 1 / 8, 4, 3).tokens,
                                       1 / 8, 4, 1 / 8, 4).delivered.items())),
        "disseminate": lambda net: repr(disseminate(net, {v: [(v,)] for v in range(1, 129, 3)})),
    }
    differ = []
    for name, fn in pipelines.items():
        outs = []
        for _ in range(2):
            net = net_for(gu if name == "diameter" else g, 7)
            outs.append((fn(net), net.metrics.to_csv(), net.metrics.phases_csv(), io_write(net.g)))
        if outs[0] != outs[1]:
            differ.append(name)
    record(12, "Determinism", not differ, f"{len(pipelines)} pipelines run twice, differing {differ}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
