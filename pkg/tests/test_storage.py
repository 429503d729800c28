import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgesim.storage import (
    PUBLIC,
    ApLoadEstimator,
    Directory,
    EdgeStore,
    LRUPart,
    NoPublicSpaceError,
    StorageConfig,
    StorageError,
    apportion,
    audit_directory,
    rebalance_private_shares,
    warmup,
)


def make_store(s_e=10, alpha=0.6, aps=(0, 1), es_id=0, directory=None, **kw):
    cfg = StorageConfig(s_e=s_e, alpha=alpha, warmup_blocks=0, **kw)
    return EdgeStore(es_id, cfg, aps, directory or Directory())


class RefStore:
    """Plain-list model: each part is a list, oldest first."""

    def __init__(self, public_cap, quotas):
        self.parts = {PUBLIC: ([], public_cap)}
        for ap, q in quotas.items():
            self.parts[ap] = ([], q)

    def _where(self, key):
        for name, (keys, _) in self.parts.items():
            if key in keys:
                return name
        return None

    def lookup(self, key):
        name = self._where(key)
        if name is None:
            return False
        keys = self.parts[name][0]
        keys.remove(key)
        keys.append(key)
        return True

    def insert(self, name, key):
        if self.lookup(key):
            return None
        keys, cap = self.parts[name]
        if cap == 0:
            return key
        victim = None
        if len(keys) >= cap:
            victim = keys.pop(0)
        keys.append(key)
        return victim

    def set_quota(self, ap, q):
        keys, _ = self.parts[ap]
        while len(keys) > q:
            keys.pop(0)
        self.parts[ap] = (keys, q)

    def snapshot(self):
        return {name: list(keys) for name, (keys, _) in self.parts.items()}


def snapshot(store):
    out = {PUBLIC: list(store.public_part)}
    for ap, part in store.private_parts.items():
        out[ap] = list(part)
    return out


def test_lru_part_basics():
    p = LRUPart(2)
    assert p.add("x") == [] and p.add("y") == []
    assert p.add("z") == ["x"]
    p.touch("y")
    assert p.add("w") == ["z"]
    assert list(p) == ["y", "w"]
    assert p.shrink(1) == ["y"]
    zero = LRUPart(0)
    assert zero.add("k") == ["k"] and len(zero) == 0


def test_lookup_refreshes_recency():
    s = make_store(s_e=10, alpha=0.0)
    assert not s.lookup(("a", 0))
    for i in range(10):
        s.insert_public(("c", i))
    assert s.lookup(("c", 0))
    assert s.insert_public(("c", 10)) == ("c", 1)
    assert ("c", 0) in s


def test_private_quota_eviction_and_dedup():
    s = make_store(s_e=4, alpha=1.0, aps=(0, 1))
    assert s.quotas == {0: 2, 1: 2}
    x, y, z = (1, 0), (2, 0), (3, 0)
    assert s.insert_private(0, x) is None
    s.insert_private(0, y)
    assert s.insert_private(0, z) == x
    occ = s.occupancy
    assert s.insert_private(0, z) is None
    assert s.occupancy == occ
    # a key already held in another part is not stored twice
    s.insert_private(1, y)
    assert s.occupancy == occ


def test_private_insert_errors():
    s = make_store(alpha=0.0)
    with pytest.raises(StorageError):
        s.insert_private(0, (1, 1))
    s = make_store(alpha=0.5, aps=(0,))
    with pytest.raises(StorageError):
        s.insert_private(7, (1, 1))


def test_public_insert_rejected_without_public_space():
    s = make_store(alpha=1.0)
    assert s.public_capacity == 0
    with pytest.raises(NoPublicSpaceError):
        s.insert_public((1, 1))


def test_partition_sizes_floor():
    cfg = StorageConfig(s_e=10, alpha=0.7)
    assert cfg.private_slots() == 7 and cfg.public_slots() == 3
    cfg = StorageConfig(s_e=3, alpha=0.5)
    assert cfg.private_slots() + cfg.public_slots() == 2


@pytest.mark.parametrize("kw", [
    dict(alpha=1.5), dict(alpha=-0.1), dict(s_e=10, warmup_blocks=11), dict(rebalance_window=0),
    dict(ewma_rho=2.0), dict(min_ap_slots=-1),
])
def test_bad_storage_config(kw):
    with pytest.raises(StorageError):
        StorageConfig(**kw).validate()


def test_too_many_aps_for_private_region():
    with pytest.raises(StorageError):
        make_store(s_e=4, alpha=0.5, aps=(0, 1, 2))


def test_apportion_examples():
    assert apportion(8, [3, 1], 1) == [6, 2]
    assert apportion(4, [1, 0], 1) == [3, 1]
    assert apportion(7, [1, 1, 1]) == [3, 2, 2]
    assert apportion(6, [0, 0]) == [3, 3]
    assert apportion(0, []) == []
    with pytest.raises(StorageError):
        apportion(2, [1, 1, 1], 1)


def test_apportion_in_granules():
    # whole stripes of 10 first; the odd leftover goes to the entry furthest
    # below its exact share
    assert apportion(280, [1] * 6, 1, 10) == [50, 50, 50, 50, 40, 40]
    assert apportion(285, [1] * 6, 1, 10) == [50, 50, 50, 50, 45, 40]
    assert apportion(280, [3, 1], 1, 10) == [210, 70]
    # too small for one granule each: plain split
    assert apportion(25, [1, 1, 1], 1, 10) == [9, 8, 8]


@settings(max_examples=200, deadline=None)
@given(
    total=st.integers(0, 500),
    weights=st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=8),
    floor=st.integers(0, 3),
    granule=st.sampled_from([1, 4, 10]),
)
def test_apportion_conserves_total(total, weights, floor, granule):
    if floor * len(weights) > total:
        return
    shares = apportion(total, weights, floor, granule)
    assert sum(shares) == total
    assert min(shares) >= floor


def test_ewma_examples():
    est = ApLoadEstimator(2, window=100, rho=0.5)
    for ap, n in ((0, 60), (1, 40)):
        for _ in range(n):
            est.record_arrival(ap)
    # the first full window seeds the estimate
    assert est.lam.tolist() == [60.0, 40.0]
    due = [est.record_arrival(ap) for ap, n in ((0, 40), (1, 60)) for _ in range(n)]
    assert due.count(True) == 1 and due[-1]
    assert est.lam.tolist() == [50.0, 50.0]


def test_ewma_degenerate_rho():
    est = ApLoadEstimator(3, window=10, rho=1.0)
    for _ in range(10):
        est.record_arrival(1)
    assert est.lam.tolist() == [0.0, 10.0, 0.0]
    est = ApLoadEstimator(2, window=5, rho=0.0)
    for _ in range(5):
        est.record_arrival(1)
    for _ in range(20):
        est.record_arrival(0)
    assert est.lam.tolist() == [0.0, 5.0]
    est = ApLoadEstimator(2, window=5, rho=0.0, initial=3.0)
    for _ in range(20):
        est.record_arrival(0)
    assert est.lam.tolist() == [3.0, 3.0]


def test_rebalance_moves_quota_and_evicts_lru():
    s = make_store(s_e=8, alpha=1.0, aps=(0, 1))
    for i in range(4):
        s.insert_private(1, ("b", i))
    s.lookup(("b", 0))
    est = ApLoadEstimator(2, window=4, rho=1.0)
    for ap in (0, 0, 0, 1):
        est.record_arrival(ap)
    evicted = rebalance_private_shares(s, est)
    assert s.quotas == {0: 6, 1: 2}
    assert sorted(evicted) == [("b", 1), ("b", 2)]
    assert list(s.private_parts[1]) == [("b", 3), ("b", 0)]
    assert ("b", 1) not in s and not s.directory.holders(("b", 1))


def test_rebalance_route_share_weights():
    s = make_store(s_e=8, alpha=1.0, aps=(0, 1))
    est = ApLoadEstimator(2, window=2, rho=1.0)
    est.record_arrival(0)
    est.record_arrival(1)
    rebalance_private_shares(s, est, {0: 0.75, 1: 0.25})
    assert s.quotas == {0: 6, 1: 2}


@pytest.mark.parametrize("seed", range(5))
def test_reference_model_equivalence(seed):
    rng = random.Random(seed)
    directory = Directory()
    cfg = StorageConfig(s_e=24, alpha=0.5, warmup_blocks=0, min_ap_slots=1)
    aps = (0, 1, 2)
    stores = [EdgeStore(e, cfg, aps, directory) for e in range(3)]
    refs = [RefStore(s.public_capacity, s.quotas) for s in stores]
    est = ApLoadEstimator(3, window=50, rho=0.3)
    for step in range(10_000):
        i = rng.randrange(3)
        s, ref = stores[i], refs[i]
        key = (rng.randrange(40), rng.randrange(3))
        op = rng.random()
        if op < 0.35:
            assert s.insert_public(key) == ref.insert(PUBLIC, key)
        elif op < 0.7:
            ap = rng.choice(aps)
            assert s.insert_private(ap, key) == ref.insert(ap, key)
        elif op < 0.95:
            assert s.lookup(key) == ref.lookup(key)
        else:
            for _ in range(50):
                est.record_arrival(rng.choice((0, 0, 1, 2)))
            rebalance_private_shares(s, est)
            for ap, q in s.quotas.items():
                ref.set_quota(ap, q)
            assert sum(s.quotas.values()) == cfg.private_slots()
        assert snapshot(s) == ref.snapshot()
        s.check_invariants()
        if step % 500 == 0:
            assert audit_directory(stores, directory)
    assert audit_directory(stores, directory)


def test_warmup_fills_public_then_private():
    directory = Directory()
    cfg = StorageConfig(s_e=20, alpha=0.5, warmup_blocks=14)
    stores = [EdgeStore(e, cfg, (0, 1), directory) for e in range(4)]
    pop = np.full(100, 0.01)
    warmup(stores, 14, pop, 14, np.random.default_rng(1))
    for s in stores:
        assert s.occupancy == 14
        assert len(s.public_part) == 10
        assert [len(p) for p in s.private_parts.values()] == [2, 2]
        s.check_invariants()
    assert audit_directory(stores, directory)


def test_warmup_boundaries_and_determinism():
    def build(units):
        d = Directory()
        cfg = StorageConfig(s_e=10, alpha=0.6, warmup_blocks=units)
        stores = [EdgeStore(e, cfg, (0, 1), d) for e in range(3)]
        warmup(stores, 4, np.ones(50) / 50, units, np.random.default_rng(7))
        return stores, d

    stores, _ = build(0)
    assert all(s.occupancy == 0 for s in stores)
    stores, d = build(10)
    assert all(s.occupancy == 10 for s in stores)
    assert audit_directory(stores, d)
    again, _ = build(10)
    assert [s.dump() for s in stores] == [s.dump() for s in again]


def test_warmup_prefers_popular_items():
    d = Directory()
    cfg = StorageConfig(s_e=100, alpha=0.0, warmup_blocks=50)
    stores = [EdgeStore(e, cfg, (0,), d) for e in range(20)]
    w = np.arange(1, 1001, dtype=float) ** -1.0
    warmup(stores, 14, w / w.sum(), 50, np.random.default_rng(0))
    contents = [k[0] for s in stores for k in s.where]
    assert np.mean(np.array(contents) < 100) > 0.5


def test_dump_shape():
    s = make_store(s_e=4, alpha=0.5, aps=(3,))
    s.insert_public(("c", 1))
    s.insert_private(3, ("c", 2))
    assert s.dump() == [
        {"es": 0, "part": "public", "blocks": [["c", 1]]},
        {"es": 0, "part": "private", "ap": 3, "blocks": [["c", 2]]},
    ]


def test_directory_tracks_multiple_holders():
    d = Directory()
    a = make_store(alpha=0.0, es_id=0, directory=d)
    b = make_store(alpha=0.0, es_id=1, directory=d)
    a.insert_public((5, 1))
    b.insert_public((5, 1))
    assert d.holders((5, 1)) == {0, 1}
    assert d.by_content == {5: {1: {0, 1}}}
    assert audit_directory([a, b], d)
