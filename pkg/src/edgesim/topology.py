"""Static edge-cloud graph: ES-ES links, AP attachments and CC gateways.

Hop distances between edge servers come from BFS over the ES graph.  AP-ES and
ES-CC distances exist only for direct links; a missing link is ``None`` in the
sparse maps and raises :class:`NotConnectedError` when queried, so it can never
leak into latency arithmetic.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rng import derive_rng

GAMMA_A_RANGE = (2.0, 3.0)
GAMMA_E_RANGE = (10.0, 15.0)
GAMMA_C_RANGE = (25.0, 30.0)
DIRECT_HOPS = (1, 2, 3)


class TopologyError(ValueError):
    pass


class NotConnectedError(TopologyError):
    pass


@dataclass
class TopologyConfig:
    num_es: int = 30
    num_ap: int = 100
    es_degree: float = 3.0
    ap_fanout_range: tuple[int, int] = (1, 3)
    cc_gateway_count: int = 3
    gamma_a: float | None = None
    gamma_e: float | None = None
    gamma_c: float | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.num_es < 1 or self.num_ap < 1:
            raise TopologyError("num_es and num_ap must be >= 1")
        if not 1 <= self.cc_gateway_count <= self.num_es:
            raise TopologyError(f"cc_gateway_count must lie in [1, {self.num_es}]")
        lo, hi = self.ap_fanout_range
        if not 1 <= lo <= hi:
            raise TopologyError(f"bad ap_fanout_range {self.ap_fanout_range}")
        if self.num_es > 2 and self.es_degree < 2:
            raise TopologyError("es_degree < 2 cannot give a well-connected ES graph")
        ga, ge, gc = self.gammas()
        if not gc > ge > ga > 0:
            raise TopologyError(f"need gamma_c > gamma_e > gamma_a > 0, got {ga}, {ge}, {gc}")

    def gammas(self) -> tuple[float, float, float]:
        """Per-hop times; unset values are drawn once from the default ranges."""
        rng = derive_rng(self.seed, "gamma")
        drawn = [rng.uniform(*r) for r in (GAMMA_A_RANGE, GAMMA_E_RANGE, GAMMA_C_RANGE)]
        given = (self.gamma_a, self.gamma_e, self.gamma_c)
        return tuple(float(g) if g is not None else d for g, d in zip(given, drawn))  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class Topology:
    num_es: int
    num_ap: int
    es_adj: tuple[tuple[int, ...], ...]
    ap_links: tuple[dict[int, int], ...]
    d_ec_direct: dict[int, int]
    gamma_a: float
    gamma_e: float
    gamma_c: float
    seed: int = 0
    d_ee: np.ndarray = field(init=False, repr=False)
    ring: tuple[tuple[tuple[int, int], ...], ...] = field(init=False, repr=False)
    ring_pos: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    _gateway: tuple[tuple[int, int], ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.es_adj) != self.num_es or len(self.ap_links) != self.num_ap:
            raise TopologyError("adjacency sizes do not match num_es / num_ap")
        if not self.d_ec_direct:
            raise TopologyError("at least one CC gateway is required")
        for a, links in enumerate(self.ap_links):
            if not links:
                raise TopologyError(f"AP {a} has no edge server link")
        d_ee = _all_pairs_bfs(self.es_adj)
        if np.any(d_ee < 0):
            raise TopologyError("ES graph is not connected")
        d_ee.setflags(write=False)
        object.__setattr__(self, "d_ee", d_ee)
        ring = tuple(
            tuple(sorted(((e, int(d_ee[e1, e])) for e in range(self.num_es)), key=lambda p: (p[1], p[0])))
            for e1 in range(self.num_es)
        )
        object.__setattr__(self, "ring", ring)
        pos = []
        for order in ring:
            p = [0] * self.num_es
            for i, (e, _) in enumerate(order):
                p[e] = i
            pos.append(tuple(p))
        object.__setattr__(self, "ring_pos", tuple(pos))
        gws = tuple(
            min(((g, int(d_ee[e1, g])) for g in self.d_ec_direct), key=lambda p: (p[1], self.d_ec_direct[p[0]], p[0]))
            for e1 in range(self.num_es)
        )
        object.__setattr__(self, "_gateway", gws)

    @property
    def cc_gateways(self) -> tuple[int, ...]:
        return tuple(sorted(self.d_ec_direct))

    def _check_es(self, e: int) -> None:
        if not 0 <= e < self.num_es:
            raise TopologyError(f"ES id {e} out of range [0, {self.num_es})")

    def d_ae(self, ap: int, es: int) -> int:
        if not 0 <= ap < self.num_ap:
            raise TopologyError(f"AP id {ap} out of range [0, {self.num_ap})")
        self._check_es(es)
        try:
            return self.ap_links[ap][es]
        except KeyError:
            raise NotConnectedError(f"AP {ap} is not linked to ES {es}") from None

    def d_ec(self, es: int) -> int:
        self._check_es(es)
        try:
            return self.d_ec_direct[es]
        except KeyError:
            raise NotConnectedError(f"ES {es} has no CC link") from None

    def d_ae_matrix(self) -> np.ndarray:
        """Dense A x E view with inf for absent links (display/inspection only)."""
        out = np.full((self.num_ap, self.num_es), np.inf)
        for a, links in enumerate(self.ap_links):
            for e, d in links.items():
                out[a, e] = d
        return out

    def d_ec_vector(self) -> np.ndarray:
        out = np.full(self.num_es, np.inf)
        for e, d in self.d_ec_direct.items():
            out[e] = d
        return out

    def aps_of(self, es: int) -> list[int]:
        return [a for a, links in enumerate(self.ap_links) if es in links]

    def to_json(self) -> dict:
        return {
            "num_es": self.num_es,
            "num_ap": self.num_ap,
            "es_adj": [[u, v] for u, nbrs in enumerate(self.es_adj) for v in nbrs if u < v],
            "ap_links": [sorted(links) for links in self.ap_links],
            "cc_gateways": list(self.cc_gateways),
            "d_ae_direct": [[a, e, d] for a, links in enumerate(self.ap_links) for e, d in sorted(links.items())],
            "d_ec_direct": [[e, d] for e, d in sorted(self.d_ec_direct.items())],
            "gamma": {"a": self.gamma_a, "e": self.gamma_e, "c": self.gamma_c},
            "seed": self.seed,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, doc: dict) -> "Topology":
        num_es, num_ap = doc["num_es"], doc["num_ap"]
        adj: list[set[int]] = [set() for _ in range(num_es)]
        for u, v in doc["es_adj"]:
            adj[u].add(v)
            adj[v].add(u)
        links: list[dict[int, int]] = [{} for _ in range(num_ap)]
        for a, e, d in doc["d_ae_direct"]:
            links[a][e] = d
        gamma = doc["gamma"]
        return cls(
            num_es,
            num_ap,
            tuple(tuple(sorted(s)) for s in adj),
            tuple(links),
            {int(e): int(d) for e, d in doc["d_ec_direct"]},
            gamma["a"],
            gamma["e"],
            gamma["c"],
            doc.get("seed", 0),
        )


def _all_pairs_bfs(adj: Sequence[Sequence[int]]) -> np.ndarray:
    n = len(adj)
    dist = np.full((n, n), -1, dtype=np.int64)
    for src in range(n):
        row = dist[src]
        row[src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if row[v] < 0:
                    row[v] = row[u] + 1
                    queue.append(v)
    return dist


def _random_tree(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniform random labelled tree via a random Pruefer sequence."""
    if n == 1:
        return []
    if n == 2:
        return [(0, 1)]
    seq = rng.integers(0, n, size=n - 2).tolist()
    degree = [1] * n
    for x in seq:
        degree[x] += 1
    edges = []
    for x in seq:
        leaf = next(i for i in range(n) if degree[i] == 1)
        edges.append((leaf, x))
        degree[leaf] -= 1
        degree[x] -= 1
    u, v = (i for i in range(n) if degree[i] == 1)
    edges.append((u, v))
    return edges


def generate_topology(cfg: TopologyConfig) -> Topology:
    cfg.validate()
    rng = derive_rng(cfg.seed, "topology")
    n = cfg.num_es
    adj: list[set[int]] = [set() for _ in range(n)]
    for u, v in _random_tree(n, rng):
        adj[u].add(v)
        adj[v].add(u)
    max_edges = n * (n - 1) // 2
    target = min(max_edges, max(n - 1, int(round(n * cfg.es_degree / 2))))
    edges = n - 1 if n > 1 else 0
    while edges < target:
        u, v = (int(x) for x in rng.choice(n, size=2, replace=False))
        if v not in adj[u]:
            adj[u].add(v)
            adj[v].add(u)
            edges += 1

    # Cover every ES with at least one AP when there are enough APs.
    lo, hi = cfg.ap_fanout_range
    hi = min(hi, n)
    lo = min(lo, hi)
    cover = rng.permutation(n).tolist()
    links: list[dict[int, int]] = []
    for a in range(cfg.num_ap):
        fanout = int(rng.integers(lo, hi + 1))
        chosen = set()
        if a < n:
            chosen.add(cover[a])
        others = [e for e in rng.permutation(n).tolist() if e not in chosen]
        chosen.update(others[: max(0, fanout - len(chosen))])
        links.append({e: int(rng.choice(DIRECT_HOPS)) for e in sorted(chosen)})

    gateways = sorted(int(g) for g in rng.choice(n, size=cfg.cc_gateway_count, replace=False))
    d_ec = {g: int(rng.choice(DIRECT_HOPS)) for g in gateways}
    ga, ge, gc = cfg.gammas()
    return Topology(
        n,
        cfg.num_ap,
        tuple(tuple(sorted(s)) for s in adj),
        tuple(links),
        d_ec,
        ga,
        ge,
        gc,
        cfg.seed,
    )


def hop_distance_es(t: Topology, e1: int, e2: int) -> int:
    t._check_es(e1)
    t._check_es(e2)
    return int(t.d_ee[e1, e2])


def es_ring_order(t: Topology, e1: int) -> list[tuple[int, int]]:
    """All ESs by ascending hop count from ``e1``, ties by ascending id."""
    t._check_es(e1)
    return list(t.ring[e1])


def nearest_cc_gateway(t: Topology, e1: int) -> tuple[int, int]:
    """Closest CC-linked ES; ties go to the smaller CC distance, then smaller id."""
    t._check_es(e1)
    return t._gateway[e1]


def ap_selection_matrix(t: Topology) -> np.ndarray:
    """Inverse-distance normalised AP -> ES selection probabilities."""
    p = np.zeros((t.num_ap, t.num_es))
    for a, links in enumerate(t.ap_links):
        if not links:
            raise NotConnectedError(f"AP {a} has no edge server link")
        inv = {e: 1.0 / d for e, d in links.items()}
        total = math.fsum(inv.values())
        for e, w in inv.items():
            p[a, e] = w / total
    return p
