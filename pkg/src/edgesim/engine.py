"""Request-serving core and the four caching policies.

A request arrives at an AP, which picks one of its edge servers with
inverse-distance probabilities.  That server searches outward ring by ring
for K distinct blocks of the requested item, fetches whatever is missing from
the cloud through the nearest CC-linked server, and earns the request's
revenue only if the slowest parallel fetch lands within the deadline.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .codec import BlockKey
from .rng import derive_pyrandom, derive_rng
from .storage import (
    PRIVATE,
    PUBLIC,
    ApLoadEstimator,
    Directory,
    EdgeStore,
    StorageConfig,
    audit_directory,
    rebalance_private_shares,
    warmup,
)
from .topology import Topology, ap_selection_matrix, nearest_cc_gateway
from .workload import PRIORITIES, Request, zipf_weights

DSPE, E, DSP, DCC = "DSPE", "E", "DSP", "DCC"
POLICY_KINDS = (DSPE, E, DSP, DCC)


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class Policy:
    kind: str
    alpha: float = 0.7
    k: int = 10
    m: int = 4
    coded: bool = True
    dynamic_shares: bool = True
    replace_on_deadline_miss: bool = True
    per_block_placement: bool = False

    @property
    def label(self) -> str:
        return self.kind

    @property
    def keys_per_content(self) -> int:
        return self.k + self.m if self.coded else 1

    @property
    def need(self) -> int:
        return self.k if self.coded else 1

    @property
    def unit_slots(self) -> int:
        return 1 if self.coded else self.k


def make_policy(kind: str, alpha: float = 0.7, k: int = 10, m: int = 4,
                dynamic_shares: bool | None = None, replace_on_deadline_miss: bool = True,
                per_block_placement: bool = False) -> Policy:
    """Build a policy with the baseline constraints applied.

    E and DCC are fully public (alpha forced to 0); DSP and DCC store whole
    items; only DSPE resizes per-AP private shares.
    """
    kind = kind.upper()
    if kind not in POLICY_KINDS:
        raise EngineError(f"unknown policy {kind!r}; expected one of {', '.join(POLICY_KINDS)}")
    if kind in (E, DCC):
        alpha = 0.0
    coded = kind in (DSPE, E)
    if dynamic_shares is None:
        dynamic_shares = kind == DSPE
    elif kind != DSPE and dynamic_shares:
        raise EngineError(f"{kind} uses static private shares")
    if not 0.0 <= alpha <= 1.0:
        raise EngineError(f"alpha must lie in [0, 1], got {alpha}")
    if k < 1 or m < 0 or k + m > 256:
        raise EngineError(f"invalid EC({k},{m})")
    return Policy(kind, alpha, k, m if coded else 0, coded, dynamic_shares,
                  replace_on_deadline_miss, per_block_placement)


@dataclass(frozen=True)
class LatencyBreakdown:
    t_ae: float | None
    t_aec: float | None
    total: float
    farthest_es: int | None
    gateway: int | None


@dataclass(frozen=True)
class Outcome:
    seq: int
    served: bool
    revenue_earned: float
    deadline: float
    latency: LatencyBreakdown
    blocks_from_edge: int
    blocks_from_cc: int
    block_indices: tuple[int, ...]
    placements: tuple[tuple[BlockKey, int, str], ...]


@dataclass
class SimReport:
    policy: str
    seed: int
    alpha: float
    k: int
    m: int
    fingerprint: str
    total_revenue: float = 0.0
    served_count: int = 0
    request_count: int = 0
    edge_hit_count: int = 0
    cc_fetch_count: int = 0
    deadline_miss_count: int = 0
    per_priority_revenue: dict[str, float] = field(default_factory=lambda: {p: 0.0 for p in PRIORITIES})
    trace_revenue: float = 0.0
    mean_occupancy: float = 0.0
    runtime_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def revenue_fraction(self) -> float:
        return self.total_revenue / self.trace_revenue if self.trace_revenue else 0.0

    def to_json(self, include_runtime: bool = True) -> dict:
        d = asdict(self)
        d["revenue_fraction"] = self.revenue_fraction
        if not include_runtime:
            d.pop("runtime_seconds")
        return d


def select_edge_server(cum_row: Sequence[tuple[float, int]], r: float) -> int:
    """Inverse-transform pick: ``cum_row`` holds (cumulative prob, es) by ascending es id."""
    if not cum_row:
        raise EngineError("AP has no connected edge server")
    for cum, es in cum_row:
        if r < cum:
            return es
    return cum_row[-1][1]


def selection_table(t: Topology) -> list[list[tuple[float, int]]]:
    p = ap_selection_matrix(t)
    table = []
    for a in range(t.num_ap):
        acc = 0.0
        row = []
        for e in sorted(t.ap_links[a]):
            acc += float(p[a, e])
            row.append((acc, e))
        table.append(row)
    return table


def find_blocks(e1: int, content: int, need_k: int, t: Topology,
                directory: Directory) -> tuple[list[tuple[BlockKey, int, int]], int]:
    """Ring search for ``need_k`` distinct block indices starting at ``e1``.

    The nearest holder of each index wins (ring order: hops, then es id); the
    walk collects indices in visiting order, lower index first within one ES.
    """
    if need_k < 1:
        raise EngineError("need_k must be >= 1")
    per_index = directory.by_content.get(content)
    if not per_index:
        return [], need_k
    pos = t.ring_pos[e1]
    cands = []
    for idx, holders in per_index.items():
        best = min(holders, key=pos.__getitem__)
        cands.append((pos[best], idx, best))
    cands.sort()
    hops = t.d_ee[e1]
    found = [(BlockKey(content, idx), es, int(hops[es])) for _, idx, es in cands[:need_k]]
    return found, need_k - len(found)


def edge_latency(ap: int, e1: int, found: Sequence[tuple[BlockKey, int, int]], t: Topology) -> tuple[float, int]:
    """AP->e1 leg plus the ES leg to the farthest contributing server."""
    if not found:
        raise EngineError("edge latency needs at least one found block")
    _, far_es, far_hops = max(found, key=lambda f: (f[2], f[1]))
    return t.d_ae(ap, e1) * t.gamma_a + far_hops * t.gamma_e, far_es


def cc_latency(ap: int, e1: int, t: Topology) -> tuple[float, int]:
    e2, hops = nearest_cc_gateway(t, e1)
    return t.d_ec(e2) * t.gamma_c + t.d_ae(ap, e1) * t.gamma_a + hops * t.gamma_e, e2


class Simulation:
    """Mutable state of one policy run; owns stores, directory and RNG streams."""

    AUDIT_EVERY = 200

    def __init__(self, policy: Policy, topology: Topology, storage_cfg: StorageConfig,
                 seed: int, num_contents: int, zipf_s: float = 0.8,
                 keep_outcomes: bool = False, debug_checks: bool = False):
        storage_cfg.validate()
        self.policy = policy
        self.t = topology
        self.seed = seed
        self.keep_outcomes = keep_outcomes
        self.debug_checks = debug_checks
        self.outcomes: list[Outcome] = []
        self._served = 0
        cfg = StorageConfig(**{**asdict(storage_cfg), "alpha": policy.alpha})
        self.storage_cfg = cfg
        self.directory = Directory()
        self.stores = [
            EdgeStore(e, cfg, topology.aps_of(e), self.directory, policy.unit_slots,
                      policy.k if policy.coded else 1)
            for e in range(topology.num_es)
        ]
        self.estimator = ApLoadEstimator(topology.num_ap, cfg.rebalance_window, cfg.ewma_rho)
        self.sel_table = selection_table(topology)
        self.sel_rng = derive_pyrandom(seed, "selection")
        self.place_rng = derive_pyrandom(seed, "placement")
        self.num_contents = num_contents
        warmup(self.stores, policy.keys_per_content, zipf_weights(num_contents, zipf_s),
               cfg.warmup_blocks // policy.unit_slots, derive_rng(seed, "warmup"))
        self._gw = [nearest_cc_gateway(topology, e) for e in range(topology.num_es)]

    def place_blocks(self, keys: Sequence[BlockKey], e1: int, ap: int) -> list[tuple[BlockKey, int, str]]:
        """Store the blocks of one fetch.

        With probability alpha they go to ``ap``'s private share on ``e1``;
        otherwise to the public part of one uniformly chosen neighbour of
        ``e1`` (``e1`` itself when it has none).  One draw covers the whole
        batch unless the policy asks for a fresh draw per block.
        """
        if self.policy.per_block_placement:
            out = []
            for key in keys:
                out += self._place([key], e1, ap)
            return out
        return self._place(keys, e1, ap)

    def _place(self, keys, e1, ap):
        rnd = self.place_rng.random
        if rnd() < self.policy.alpha:
            store, part = self.stores[e1], PRIVATE
            for key in keys:
                store.insert_private(ap, key)
        else:
            nbrs = self.t.es_adj[e1]
            store = self.stores[nbrs[int(rnd() * len(nbrs))] if nbrs else e1]
            part = PUBLIC
            if store.public_capacity <= 0:
                return []
            for key in keys:
                store.insert_public(key)
        return [(key, store.es_id, part) for key in keys]

    def serve(self, req: Request) -> Outcome:
        t = self.t
        policy = self.policy
        due = self.estimator.record_arrival(req.ap)
        e1 = select_edge_server(self.sel_table[req.ap], self.sel_rng.random())
        need = policy.need
        found, missing = find_blocks(e1, req.content, need, t, self.directory)
        base = t.ap_links[req.ap][e1] * t.gamma_a
        ge = t.gamma_e
        deadline = req.deadline

        t_ae = far_es = None
        if found:
            far = max(found, key=lambda f: (f[2], f[1]))
            t_ae = base + far[2] * ge
            far_es = far[1]
            for key, es, _ in found:
                self.stores[es].lookup(key)
        t_aec = gateway = None
        to_place: list[BlockKey] = []
        if missing:
            gateway, gw_hops = self._gw[e1]
            t_aec = t.d_ec_direct[gateway] * t.gamma_c + base + gw_hops * ge
            have = {key.index for key, _, _ in found}
            fetch = [i for i in range(policy.keys_per_content) if i not in have][:missing]
            to_place = [BlockKey(req.content, i) for i in fetch]
            total = t_aec if t_ae is None else max(t_ae, t_aec)
        else:
            total = t_ae
        served = total <= deadline
        if not served and policy.replace_on_deadline_miss:
            to_place += [key for key, _, h in found if base + h * ge > deadline]

        placements = self.place_blocks(to_place, e1, req.ap) if to_place else []

        if due and policy.dynamic_shares:
            for store in self.stores:
                rebalance_private_shares(store, self.estimator)
        if self.debug_checks:
            self._served += 1
            self.check_invariants(audit=self._served % self.AUDIT_EVERY == 0)

        return Outcome(
            req.seq,
            served,
            req.revenue if served else 0.0,
            deadline,
            LatencyBreakdown(t_ae, t_aec, total, far_es, gateway),
            len(found),
            missing,
            tuple(key.index for key, _, _ in found),
            tuple(placements),
        )

    def check_invariants(self, audit: bool = True) -> None:
        """Capacity and quota bounds on every store; optionally the full directory audit."""
        for s in self.stores:
            s.check_invariants()
            assert sum(s.quotas.values()) == (s.private_total if s.aps else 0)
        if audit:
            assert audit_directory(self.stores, self.directory)

    def run(self, trace: Sequence[Request], report: SimReport) -> SimReport:
        num_ap = self.t.num_ap
        for req in trace:
            if not 0 <= req.ap < num_ap:
                raise EngineError(f"request {req.seq}: AP {req.ap} not in topology (num_ap={num_ap})")
            if not 0 <= req.content < self.num_contents:
                raise EngineError(f"request {req.seq}: content {req.content} outside catalog of {self.num_contents}")
        for req in trace:
            out = self.serve(req)
            report.request_count += 1
            report.trace_revenue += req.revenue
            if out.blocks_from_cc:
                report.cc_fetch_count += 1
            else:
                report.edge_hit_count += 1
            if out.served:
                report.served_count += 1
                report.total_revenue += out.revenue_earned
                report.per_priority_revenue[req.priority] = report.per_priority_revenue.get(req.priority, 0.0) + out.revenue_earned
            else:
                report.deadline_miss_count += 1
            if self.keep_outcomes:
                self.outcomes.append(out)
        if self.debug_checks:
            self.check_invariants()
        if self.stores:
            report.mean_occupancy = sum(s.occupancy for s in self.stores) / len(self.stores)
        return report


def fingerprint(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=_jsonable)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _jsonable(o):
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    if isinstance(o, Topology):
        return o.to_json()
    raise TypeError(type(o).__name__)


def run_simulation(policy: Policy, trace: Sequence[Request], topology: Topology,
                   storage_cfg: StorageConfig, seed: int, num_contents: int | None = None,
                   zipf_s: float = 0.8, keep_outcomes: bool = False,
                   debug_checks: bool = False) -> tuple[SimReport, Simulation]:
    """Process ``trace`` in order under ``policy``; returns the report and final state."""
    if num_contents is None:
        num_contents = max((r.content for r in trace), default=0) + 1
    start = time.perf_counter()
    sim = Simulation(policy, topology, storage_cfg, seed, num_contents, zipf_s,
                     keep_outcomes=keep_outcomes, debug_checks=debug_checks)
    report = SimReport(
        policy.label, seed, policy.alpha, policy.k, policy.m,
        fingerprint(asdict(policy), asdict(storage_cfg), topology.to_json(), len(trace), seed),
    )
    sim.run(trace, report)
    report.runtime_seconds = time.perf_counter() - start
    return report, sim
