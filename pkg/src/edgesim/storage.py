"""Partitioned per-ES block stores, AP load estimation and the block directory.

Capacities are counted in *units*.  For erasure-coded policies one unit is one
coded block slot; whole-item policies store one item per unit, where a unit
spans K slots of the same byte budget.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

Key = Hashable

PUBLIC = "public"
PRIVATE = "private"


class StorageError(ValueError):
    pass


class NoPublicSpaceError(StorageError):
    pass


def _floor(x: float) -> int:
    # Guard against 0.7 * 10 style float noise landing just under an integer.
    return math.floor(x + 1e-9)


@dataclass
class StorageConfig:
    s_e: int = 1000
    alpha: float = 0.7
    warmup_blocks: int = 50
    rebalance_window: int = 1000
    ewma_rho: float = 0.2
    min_ap_slots: int = 1

    def validate(self) -> None:
        if self.s_e < 0:
            raise StorageError("s_e must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise StorageError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0 <= self.warmup_blocks <= self.s_e:
            raise StorageError("warmup_blocks must lie in [0, s_e]")
        if self.rebalance_window < 1:
            raise StorageError("rebalance_window must be >= 1")
        if not 0.0 <= self.ewma_rho <= 1.0:
            raise StorageError("ewma_rho must lie in [0, 1]")
        if self.min_ap_slots < 0:
            raise StorageError("min_ap_slots must be >= 0")

    def private_slots(self) -> int:
        return _floor(self.alpha * self.s_e)

    def public_slots(self) -> int:
        return _floor((1.0 - self.alpha) * self.s_e)


class LRUPart:
    """Bounded LRU set; the oldest key sits at the front."""

    __slots__ = ("capacity", "keys")

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.keys: OrderedDict[Key, None] = OrderedDict()

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, key: Key) -> bool:
        return key in self.keys

    def __iter__(self):
        return iter(self.keys)

    def touch(self, key: Key) -> None:
        self.keys.move_to_end(key)

    def add(self, key: Key) -> list[Key]:
        """Insert a new key, returning whatever had to be evicted to make room."""
        evicted = []
        while len(self.keys) >= self.capacity and self.keys:
            evicted.append(self.keys.popitem(last=False)[0])
        if self.capacity > 0:
            self.keys[key] = None
        else:
            evicted.append(key)
        return evicted

    def shrink(self, capacity: int) -> list[Key]:
        self.capacity = capacity
        evicted = []
        while len(self.keys) > capacity:
            evicted.append(self.keys.popitem(last=False)[0])
        return evicted


class Directory:
    """Global map from block key to the ESs currently holding it.

    Keys are ``(content, index)`` pairs; holders are grouped by content so a
    lookup for one item touches only that item's indices.  The CC implicitly
    holds every block.
    """

    cc_holds_all = True

    def __init__(self) -> None:
        self.by_content: dict[int, dict[int, set[int]]] = {}

    def add(self, key: Key, es: int) -> None:
        content, index = key
        self.by_content.setdefault(content, {}).setdefault(index, set()).add(es)

    def remove(self, key: Key, es: int) -> None:
        content, index = key
        per_index = self.by_content[content]
        holders = per_index[index]
        holders.discard(es)
        if not holders:
            del per_index[index]
            if not per_index:
                del self.by_content[content]

    def holders(self, key: Key) -> set[int]:
        content, index = key
        return set(self.by_content.get(content, {}).get(index, ()))

    def placement(self) -> dict[Key, set[int]]:
        return {
            (c, i): set(h)
            for c, per_index in self.by_content.items()
            for i, h in per_index.items()
        }


class EdgeStore:
    def __init__(self, es_id: int, cfg: StorageConfig, aps: Sequence[int],
                 directory: Directory, unit_slots: int = 1, granule: int = 1):
        self.es_id = es_id
        self.alpha = cfg.alpha
        self.unit_slots = unit_slots
        self.s_e = cfg.s_e // unit_slots
        self.private_total = cfg.private_slots() // unit_slots
        self.public_capacity = cfg.public_slots() // unit_slots
        self.min_ap_slots = cfg.min_ap_slots
        self.granule = granule
        self.aps = tuple(sorted(aps))
        self.directory = directory
        self.public_part = LRUPart(self.public_capacity)
        self.private_parts: dict[int, LRUPart] = {}
        self.where: dict[Key, LRUPart] = {}
        if self.private_total > 0 and self.aps:
            if self.min_ap_slots * len(self.aps) > self.private_total:
                raise StorageError(
                    f"ES {es_id}: {len(self.aps)} APs x min_ap_slots {self.min_ap_slots}"
                    f" exceed {self.private_total} private units"
                )
            shares = apportion(self.private_total, [1.0] * len(self.aps), self.min_ap_slots, granule)
        else:
            shares = [0] * len(self.aps)
        for ap, q in zip(self.aps, shares):
            self.private_parts[ap] = LRUPart(q)

    @property
    def quotas(self) -> dict[int, int]:
        return {ap: part.capacity for ap, part in self.private_parts.items()}

    @property
    def occupancy(self) -> int:
        return len(self.where)

    def __contains__(self, key: Key) -> bool:
        return key in self.where

    def lookup(self, key: Key) -> bool:
        part = self.where.get(key)
        if part is None:
            return False
        part.touch(key)
        return True

    def _insert(self, part: LRUPart, key: Key) -> Key | None:
        existing = self.where.get(key)
        if existing is not None:
            existing.touch(key)
            return None
        evicted = part.add(key)
        for victim in evicted:
            if victim == key:
                continue
            del self.where[victim]
            self.directory.remove(victim, self.es_id)
        if key in part:
            self.where[key] = part
            self.directory.add(key, self.es_id)
        return evicted[0] if evicted else None

    def insert_private(self, ap: int, key: Key) -> Key | None:
        if self.alpha <= 0:
            raise StorageError(f"ES {self.es_id} has no private region (alpha = 0)")
        part = self.private_parts.get(ap)
        if part is None:
            raise StorageError(f"AP {ap} is not attached to ES {self.es_id}")
        return self._insert(part, key)

    def insert_public(self, key: Key) -> Key | None:
        if self.public_capacity <= 0:
            raise NoPublicSpaceError(f"ES {self.es_id} has no public space")
        return self._insert(self.public_part, key)

    def set_quotas(self, quotas: dict[int, int]) -> list[Key]:
        evicted = []
        for ap, q in quotas.items():
            for victim in self.private_parts[ap].shrink(q):
                del self.where[victim]
                self.directory.remove(victim, self.es_id)
                evicted.append(victim)
        return evicted

    def parts(self) -> Iterable[tuple[str, int | None, LRUPart]]:
        yield PUBLIC, None, self.public_part
        for ap, part in self.private_parts.items():
            yield PRIVATE, ap, part

    def dump(self) -> list[dict]:
        out = []
        for kind, ap, part in self.parts():
            entry = {"es": self.es_id, "part": kind, "blocks": [list(k) for k in part]}
            if ap is not None:
                entry["ap"] = ap
            out.append(entry)
        return out

    def check_invariants(self) -> None:
        assert self.occupancy <= self.s_e
        assert len(self.public_part) <= self.public_capacity
        assert sum(self.quotas.values()) <= self.private_total
        seen = 0
        for _, _, part in self.parts():
            assert len(part) <= part.capacity
            seen += len(part)
        assert seen == self.occupancy


def apportion(total: int, weights: Sequence[float], floor: int = 0, granule: int = 1) -> list[int]:
    """Largest-remainder split of ``total`` by ``weights`` with a per-entry floor.

    Remainder ties go to the lower position. Zero total weight splits evenly.
    With ``granule`` > 1 the split is made in whole granules and the leftover
    goes to the entry furthest below its exact share.
    """
    if granule > 1 and total >= granule * len(weights) and floor <= granule:
        shares = apportion(total // granule, weights, 1 if floor else 0)
        shares = [s * granule for s in shares]
        leftover = total - sum(shares)
        if leftover:
            exact = apportion(total, weights, floor)
            pick = max(range(len(shares)), key=lambda i: (exact[i] - shares[i], -i))
            shares[pick] += leftover
        return shares
    n = len(weights)
    if n == 0:
        return []
    base = [floor] * n
    rest = total - floor * n
    if rest < 0:
        raise StorageError(f"floor {floor} x {n} exceeds total {total}")
    w = [max(0.0, float(x)) for x in weights]
    wsum = math.fsum(w)
    if wsum <= 0:
        w = [1.0] * n
        wsum = float(n)
    exact = [rest * x / wsum for x in w]
    whole = [int(math.floor(x)) for x in exact]
    left = rest - sum(whole)
    order = sorted(range(n), key=lambda i: (-(exact[i] - whole[i]), i))
    for i in order[:left]:
        whole[i] += 1
    return [b + x for b, x in zip(base, whole)]


class ApLoadEstimator:
    """Windowed EWMA of per-AP arrival counts.

    Without an explicit ``initial`` value the first full window seeds the
    estimate directly; later windows fold in as rho * count + (1 - rho) * lam.
    """

    def __init__(self, num_ap: int, window: int = 1000, rho: float = 0.2,
                 initial: float | None = None):
        self.window = window
        self.rho = rho
        self.seeded = initial is not None
        self.lam = np.full(num_ap, float(initial or 0.0))
        self.counts = np.zeros(num_ap, dtype=np.int64)
        self.window_count = 0

    def record_arrival(self, ap: int) -> bool:
        """Count one arrival; True when this arrival closes a window."""
        self.counts[ap] += 1
        self.window_count += 1
        if self.window_count < self.window:
            return False
        if self.seeded:
            self.lam = self.rho * self.counts + (1.0 - self.rho) * self.lam
        else:
            self.lam = self.counts.astype(float)
            self.seeded = True
        self.counts[:] = 0
        self.window_count = 0
        return True


def rebalance_private_shares(store: EdgeStore, est: ApLoadEstimator,
                             route_share: dict[int, float] | None = None) -> list[Key]:
    """Re-split the private region by AP load; returns the evicted keys.

    ``route_share[ap]`` is the fraction of the AP's requests this ES receives
    (1.0 when omitted), so a multi-homed AP is weighted by the load it
    actually sends here.
    """
    if store.private_total <= 0 or not store.aps:
        return []
    if route_share is None:
        weights = [float(est.lam[ap]) for ap in store.aps]
    else:
        weights = [float(est.lam[ap]) * route_share[ap] for ap in store.aps]
    shares = apportion(store.private_total, weights, store.min_ap_slots, store.granule)
    return store.set_quotas(dict(zip(store.aps, shares)))


def warmup(stores: Sequence[EdgeStore], keys_per_content: int, popularity: np.ndarray,
           warmup_units: int, rng: np.random.Generator) -> None:
    """Fill each store with ``warmup_units`` distinct popularity-sampled keys.

    Keys go to the public part first; the overflow is dealt round-robin over
    the private parts.  Requests above a store's real capacity are clamped.
    """
    if warmup_units <= 0:
        return
    num_contents = len(popularity)
    p = np.asarray(popularity, dtype=float)
    p = p / p.sum()
    universe = num_contents * keys_per_content
    for store in stores:
        want = min(warmup_units, store.public_capacity + store.private_total, universe)
        chosen: list[tuple[int, int]] = []
        seen = set()
        while len(chosen) < want:
            batch = max(2 * (want - len(chosen)), 16)
            contents = rng.choice(num_contents, size=batch, p=p)
            indices = rng.integers(0, keys_per_content, size=batch)
            for c, i in zip(contents.tolist(), indices.tolist()):
                key = (c, i)
                if key not in seen:
                    seen.add(key)
                    chosen.append(key)
                    if len(chosen) == want:
                        break
        it = iter(chosen)
        for key in it:
            if len(store.public_part) < store.public_capacity:
                store.insert_public(key)
            else:
                _deal_private(store, [key, *it])
                break


def _deal_private(store: EdgeStore, keys: list) -> None:
    parts = [(ap, p) for ap, p in store.private_parts.items() if p.capacity > 0]
    i = 0
    for key in keys:
        while parts and len(parts[i % len(parts)][1]) >= parts[i % len(parts)][1].capacity:
            parts.pop(i % len(parts))
        if not parts:
            return
        ap, _ = parts[i % len(parts)]
        store.insert_private(ap, key)
        i += 1


def audit_directory(stores: Sequence[EdgeStore], directory: Directory) -> bool:
    expected: dict = {}
    for s in stores:
        for key in s.where:
            expected.setdefault(tuple(key), set()).add(s.es_id)
    return expected == {tuple(k): v for k, v in directory.placement().items()}
