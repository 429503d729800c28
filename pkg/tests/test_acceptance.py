"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The trend criteria (5-7) run the desk-scale setup: 30 ESs, 100 APs, 1000
items, 100k requests, 5 paired seeds.  They take several minutes in total.
"""
import dataclasses
import itertools
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import build_topology, record_criterion
from edgesim import experiments as ex
from edgesim.cli import main as cli_main
from edgesim.codec import BlockKey, encode, make_params, reconstruct, storage_overhead, storage_overhead_exact
from edgesim.engine import DCC, DSP, DSPE, E, Simulation, make_policy, run_simulation, select_edge_server, selection_table
from edgesim.storage import PRIVATE, StorageConfig
from edgesim.topology import TopologyConfig, ap_selection_matrix, generate_topology
from edgesim.workload import Request, TraceConfig, generate_trace

SEEDS = 5
N = 100_000
ALPHAS = [round(0.1 * i, 1) for i in range(11)]
COMMON = [0.0, 0.2, 0.4, 0.8, 1.0]
BATCH = 10_000


def desk_cfg(**kw):
    base = dict(
        topology_cfg=TopologyConfig(num_es=30, num_ap=100),
        storage_cfg=StorageConfig(),
        trace_cfg=TraceConfig(num_requests=N, num_contents=1000, priority_ratio=(70, 20, 10)),
        replicates=SEEDS,
    )
    base.update(kw)
    return ex.ExperimentConfig(**base)


def pct(a, b):
    return 100.0 * (a - b) / b


# 1 ------------------------------------------------------------------------

def test_criterion_1_codec_exactness():
    rng = random.Random(2024)
    start = time.perf_counter()
    checked = 0
    bad = []
    for k in range(1, 13):
        for m in range(0, 5):
            params = make_params(k, m)
            data = bytes(rng.randrange(256) for _ in range(4096))
            blocks = encode(params, data)
            n = k + m
            if n <= 12:
                subsets = itertools.combinations(range(n), k)
            else:
                subsets = [sorted(rng.sample(range(n), k)) for _ in range(100)]
            for sub in subsets:
                checked += 1
                if reconstruct(params, [blocks[i] for i in sub]) != data:
                    bad.append((k, m, tuple(sub)))
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 60
    record_criterion(1, ok, f"{checked} subsets decoded, {len(bad)} mismatches, {elapsed:.1f}s (< 60s)")
    assert ok


# 2 ------------------------------------------------------------------------

def test_criterion_2_overhead():
    exact = storage_overhead_exact(10, 4), storage_overhead_exact(3, 1)
    ok = (exact == (Fraction(7, 5), Fraction(4, 3)) and storage_overhead(10, 4) == 1.4
          and round(storage_overhead(3, 1), 4) == 1.3333)
    record_criterion(2, ok, f"EC(10,4) -> {exact[0]} = {float(exact[0])}, EC(3,1) -> {exact[1]} ~ {float(exact[1]):.4f}")
    assert ok


# 3 ------------------------------------------------------------------------

def test_criterion_3_selection_probabilities():
    t = build_topology(3, [(0, 1), (1, 2)], [{0: 1, 1: 2, 2: 3}], {0: 1})
    p = ap_selection_matrix(t)[0]
    want = (0.545, 0.273, 0.182)
    analytic = all(abs(x - w) <= 0.005 for x, w in zip(p, want))
    row = selection_table(t)[0]
    rng = random.Random(7)
    draws = 100_000
    counts = np.bincount([select_edge_server(row, rng.random()) for _ in range(draws)], minlength=3)
    freq = counts / draws
    empirical = all(abs(f - x) <= 0.01 for f, x in zip(freq, p))
    ok = analytic and empirical
    record_criterion(3, ok, f"P = {np.round(p, 4).tolist()} (+-0.005 of {list(want)}), "
                            f"100k draws -> {np.round(freq, 4).tolist()} (+-0.01)")
    assert ok


# 4 ------------------------------------------------------------------------

def test_criterion_4_worked_example(fig5):
    policy = make_policy(DSPE, alpha=1.0, k=3, m=1)
    sim = Simulation(policy, fig5, StorageConfig(s_e=20, alpha=1.0, warmup_blocks=0), 0, 10)
    content = 1
    sim.stores[7].insert_private(sim.stores[7].aps[0], BlockKey(content, 0))
    sim.stores[2].insert_private(sim.stores[2].aps[0], BlockKey(content, 1))
    out = sim.serve(Request(0, content, 1, 1000, 10, "H"))
    lat = out.latency
    hops = {es: int(fig5.d_ee[6, es]) for es in (7, 2, 4)}
    cc_path = fig5.d_ec(4) * fig5.gamma_c + fig5.d_ae(1, 6) * fig5.gamma_a + 2 * fig5.gamma_e
    ok = (
        out.block_indices == (0, 1)
        and hops == {7: 1, 2: 3, 4: 2}
        and lat.farthest_es == 2
        and out.blocks_from_cc == 1
        and lat.gateway == 4
        and lat.t_aec == cc_path == 47
        and lat.total == lat.t_aec
        and out.placements == ((BlockKey(content, 2), 6, PRIVATE),)
    )
    record_criterion(4, ok, f"d1@ES7 (1 hop), d2@ES2 (3 hops), d3 via gateway ES{lat.gateway} "
                            f"(2 hops), total {lat.total} == CC path {cc_path}")
    assert ok


# 5-7: trend runs ----------------------------------------------------------

@pytest.fixture(scope="module")
def compare_runs():
    start = time.perf_counter()
    recs = ex.run_compare(desk_cfg())
    return recs, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_5_policy_ordering(compare_runs):
    recs, elapsed = compare_runs
    mean = {p: ex.mean_revenue(recs, p) for p in (DSPE, E, DSP, DCC)}
    best_base = max(mean[E], mean[DSP], mean[DCC])
    checks = {
        "DSPE>E": mean[DSPE] > mean[E],
        "DSPE>DSP": mean[DSPE] > mean[DSP],
        "DSP>DCC": mean[DSP] > mean[DCC],
        "margin>=2%": mean[DSPE] >= 1.02 * best_base,
        "runtime<300s": elapsed < 300,
    }
    ok = all(checks.values())
    shown = ", ".join(f"{p}={mean[p]:.0f}" for p in (DSPE, E, DSP, DCC))
    verdicts = " ".join(f"{k}:{'y' if v else 'n'}" for k, v in checks.items())
    record_criterion(5, ok, f"mean revenue {shown}; DSPE vs best baseline {pct(mean[DSPE], best_base):+.2f}%; "
                            f"{verdicts}; {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_6_alpha_sweep():
    recs = ex.run_alpha_sweep(desk_cfg(policies=[DSPE]), ALPHAS)
    per_seed = [ex.argmax_value(recs, DSPE, seed) for seed in range(SEEDS)]
    inside = sum(0.3 <= a <= 0.9 for a in per_seed)
    mean = {a: ex.mean_revenue(recs, DSPE, a) for a in ALPHAS}
    checks = {
        "argmax in [0.3,0.9] >=4/5": inside >= 4,
        "0.7>0.0": mean[0.7] > mean[0.0],
        "0.7>1.0": mean[0.7] > mean[1.0],
    }
    ok = all(checks.values())
    curve = " ".join(f"{a}:{mean[a]:.0f}" for a in ALPHAS)
    verdicts = " ".join(f"{k}:{'y' if v else 'n'}" for k, v in checks.items())
    record_criterion(6, ok, f"per-seed argmax {per_seed}; mean revenue by alpha {curve}; {verdicts}")
    assert ok


@pytest.mark.slow
def test_criterion_7_common_sweep():
    cfg = desk_cfg(policies=[DSPE, E], trace_cfg=TraceConfig(num_requests=N, batch_size=BATCH))
    recs = ex.run_common_sweep(cfg, COMMON)
    gap = {c: pct(ex.mean_revenue(recs, DSPE, c), ex.mean_revenue(recs, E, c)) for c in COMMON}
    low = [c for c in COMMON if c <= 0.4]
    high = [c for c in COMMON if c >= 0.8]
    checks = {
        "|gap|<3% at <=0.4": all(abs(gap[c]) < 3.0 for c in low),
        "DSPE>E at >=0.8": all(gap[c] > 0 for c in high),
    }
    ok = all(checks.values())
    shown = " ".join(f"{c}:{gap[c]:+.2f}%" for c in COMMON)
    verdicts = " ".join(f"{k}:{'y' if v else 'n'}" for k, v in checks.items())
    record_criterion(7, ok, f"(DSPE-E)/E by overlap {shown}; {verdicts}")
    assert ok


# 8 ------------------------------------------------------------------------

def test_criterion_8_invariant_suites():
    from test_storage import test_reference_model_equivalence

    failures = []
    for seed in range(5):
        try:
            test_reference_model_equivalence(seed)
        except AssertionError as exc:
            failures.append(f"lru seed {seed}: {exc}")
        topo = generate_topology(TopologyConfig(seed=seed))
        trace = generate_trace(TraceConfig(num_requests=10_000, seed=seed), topo.num_ap)
        for kind in (DSPE, DSP):
            try:
                # debug_checks asserts capacity/quota bounds per request and audits the directory
                rep, sim = run_simulation(make_policy(kind), trace, topo, StorageConfig(), seed, 1000,
                                          keep_outcomes=True, debug_checks=True)
                outs = sim.outcomes
                assert rep.total_revenue == sum(o.revenue_earned for o in outs)
                assert rep.served_count == sum(o.served for o in outs)
                assert all(o.served == (o.latency.total <= r.deadline) for o, r in zip(outs, trace))
            except AssertionError as exc:
                failures.append(f"{kind} seed {seed}: {exc!r}")
    ok = not failures
    record_criterion(8, ok, "LRU reference model, directory audit, capacity, quota, deadline gate and "
                            f"revenue identity over 10k ops x 5 seeds; failures: {failures or 'none'}")
    assert ok


# 9 ------------------------------------------------------------------------

def test_criterion_9_cli_determinism(tmp_path):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        rc = cli_main(["compare", "--requests", "5000", "--replicates", "2", "--seed", "11", "--out", str(out)])
        outputs.append((rc, (out / "summary.csv").read_bytes()))
    (rc1, a), (rc2, b) = outputs
    ok = rc1 == rc2 == 0 and a == b
    record_criterion(9, ok, f"two identical CLI compare runs -> summary.csv {len(a)} bytes, identical={a == b}")
    assert ok


# 10 -----------------------------------------------------------------------

def _numbers(rep):
    d = rep.to_json(include_runtime=False)
    for key in ("policy", "fingerprint", "extra"):
        d.pop(key)
    return d


def test_criterion_10_degenerations():
    equal = []
    monotone = []
    for seed in range(3):
        topo = generate_topology(TopologyConfig(seed=seed))
        trace = generate_trace(TraceConfig(num_requests=20_000, seed=seed), topo.num_ap)
        e, _ = run_simulation(make_policy(E), trace, topo, StorageConfig(), seed, 1000)
        d, _ = run_simulation(make_policy(DSPE, alpha=0.0, dynamic_shares=False), trace, topo, StorageConfig(), seed, 1000)
        equal.append(_numbers(e) == _numbers(d))
        loose = [dataclasses.replace(r, deadline=r.deadline * 10) for r in trace]
        base, _ = run_simulation(make_policy(DSPE), trace, topo, StorageConfig(), seed, 1000)
        relaxed, _ = run_simulation(make_policy(DSPE), loose, topo, StorageConfig(), seed, 1000)
        monotone.append((base.total_revenue, relaxed.total_revenue))
    ok = all(equal) and all(b >= a for a, b in monotone)
    record_criterion(10, ok, f"E == DSPE(alpha=0, static) on 3 seeds: {equal}; revenue base -> 10x deadlines: {monotone}")
    assert ok
