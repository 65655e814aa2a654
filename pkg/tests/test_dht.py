import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhtchain import pads
from dhtchain.dht import (
    ALL, NONE, AuthorityRegion, LookupFailed, NotAuthority, Overlay, RoutingTable,
    StorageIncomplete, authority_map, authority_prune, authority_set, build_routing_tables,
    get_witness, new_storage, rebuild_from_replicas, refresh_storage_pads, xor_distance,
)
from dhtchain.ledger import ChainParams, append_block, assemble_block
from dhtchain.pads import TreeConfig

from .chainsim import OracleChain
from .oracles import apply_transfers, full_root

W3 = TreeConfig(width=3)
FIG1 = {k: b"v%d" % k for k in range(8)}
N1, N2 = 0b000, 0b100
FIG1_STORERS = (0b000, 0b010, 0b100, 0b110)


def test_xor_basics():
    assert xor_distance(5, 5) == 0
    assert xor_distance(3, 9) == xor_distance(9, 3) == 10
    with pytest.raises(ValueError):
        xor_distance(8, 1, width=3)


@given(st.integers(0, 2**16 - 1), st.integers(0, 2**16 - 1), st.integers(0, 2**16 - 1))
def test_xor_triangle(a, b, c):
    assert xor_distance(a, c) == xor_distance(a, b) ^ xor_distance(b, c)
    assert xor_distance(a, c) <= xor_distance(a, b) + xor_distance(b, c)


def test_authority_set_examples():
    assert authority_set(7, [3], 1) == (3,)
    assert set(authority_set(7, [1, 2, 3], 5)) == {1, 2, 3}
    assert authority_set(0b101, FIG1_STORERS, 1) == (N2,)
    with pytest.raises(ValueError):
        authority_set(1, [], 1)
    with pytest.raises(ValueError):
        authority_set(1, [1], 0)


@pytest.mark.parametrize("n,r", [(1, 1), (7, 2), (16, 3), (64, 4), (5, 9)])
def test_every_key_has_min_r_n_authorities(n, r):
    rng = random.Random(n * 100 + r)
    ids = rng.sample(range(256), n)
    keys = list(range(256))
    amap = authority_map(keys, ids, r)
    assert amap.shape == (256, min(r, n))
    for k in keys:
        expect = authority_set(k, ids, r)
        assert tuple(int(x) for x in amap[k]) == expect
        # brute force: the r smallest distances
        ranked = sorted(ids, key=lambda i: i ^ k)[:r]
        assert set(expect) == set(ranked)


@pytest.mark.parametrize("seed", range(5))
def test_region_coverage_matches_membership(seed):
    rng = random.Random(seed)
    ids = rng.sample(range(256), rng.randint(2, 20))
    r = rng.randint(1, 4)
    for node in ids[:4]:
        region = AuthorityRegion(node, tuple(ids), r, 8)
        members = {k for k in range(256) if node in authority_set(k, ids, r)}
        assert {k for k in range(256) if region.contains(k)} == members
        for _ in range(50):
            h = rng.randint(0, 8)
            prefix = rng.randrange(1 << (8 - h))
            inside = {(prefix << h) | j for j in range(1 << h)}
            cov = region.coverage(prefix, h)
            if cov == ALL:
                assert inside <= members
            elif cov == NONE:
                assert not inside & members
            else:
                assert inside & members and not inside <= members


def test_storage_load_tracks_replication():
    rng = random.Random(7)
    n, r, w = 32, 3, 12
    ids = rng.sample(range(1 << w), n)
    amap = authority_map(range(1 << w), ids, r)
    counts = {i: 0 for i in ids}
    for row in amap:
        for a in row:
            counts[int(a)] += 1
    expected = r * (1 << w) / n
    assert sum(counts.values()) == r * (1 << w)
    for c in counts.values():
        assert expected / 3 <= c <= expected * 3


# -- Fig. 1 ------------------------------------------------------------------


def fig1_storage(node):
    full = pads.build_full(FIG1, W3)
    return new_storage(full, AuthorityRegion(node, FIG1_STORERS, 1, 3), 0)


def test_fig1_storage_shapes():
    full = pads.build_full(FIG1, W3)
    s1, s2 = fig1_storage(N1), fig1_storage(N2)
    assert s1.pads == pads.prune(full, {0, 1})
    assert s2.pads == pads.prune(full, {4, 5})
    assert s1.root == s2.root == full.root


def test_fig1_get_witness():
    s1 = fig1_storage(N1)
    w = get_witness(s1, 0)
    assert w.value == b"v0" and w.pivot_index == 0
    assert pads.verify_proof(W3, s1.root, 0, w.value, w.proof)
    with pytest.raises(NotAuthority):
        get_witness(s1, 4)


def test_authority_prune_missing_data():
    full = pads.build_full(FIG1, W3)
    partial = pads.prune(full, {4})
    with pytest.raises(StorageIncomplete):
        authority_prune(partial, AuthorityRegion(N1, FIG1_STORERS, 1, 3))


# -- refresh against the oracle ----------------------------------------------


def _storers(oc, n, r, rng):
    ids = rng.sample(range(1 << oc.params.width), n)
    full = pads.build_full(oc.pre[0], oc.cfg)
    return [new_storage(full, AuthorityRegion(i, tuple(ids), r, oc.params.width), 0) for i in ids]


def _step(oc, n_txs=4):
    txs = [oc.random_transfer() for _ in range(n_txs)]
    asm = assemble_block(oc.chain, txs, n_txs)
    note = append_block(oc.chain, asm.block, asm.post_state)
    ops = [(t.op.sender, t.op.recipient, t.op.amount) for t in txs]
    oc.record(asm.block, apply_transfers(oc.pre[-1], ops)[0])
    return note


def test_refresh_tracks_oracle_over_100_blocks():
    params = ChainParams(d=3, f=2, width=8)
    oc = OracleChain(params, n_accounts=30, seed=21)
    rng = random.Random(1)
    stores = _storers(oc, 6, 2, rng)
    for _ in range(100):
        note = _step(oc)
        if note is None:
            continue
        stores = [refresh_storage_pads(s, note.tau_bar, note.new_pivot) for s in stores]
        pivot = note.new_pivot
        assert oc.chain.pivot_index == pivot
        want = full_root(oc.pre[pivot], 8)
        state = oc.pre[pivot]
        for s in stores:
            assert s.root == want and s.pivot_index == pivot
        # every key served by every authority, identical across replicas
        for k in range(0, 256, 7):
            served = {get_witness(s, k) for s in stores if s.region.contains(k)}
            assert len(served) == 1
            (w,) = served
            assert w.value == state.get(k, b"")
            assert pads.verify_proof(oc.cfg, oc.chain.tau(pivot).root, k, w.value, w.proof)


def test_refresh_untouched_region_only_moves_pivot():
    oc = OracleChain(ChainParams(d=2, f=1, width=8), seed=22)
    region = AuthorityRegion(0, (0, 128), 1, 8)
    s = new_storage(pads.build_full(oc.pre[0], oc.cfg), region, 0)
    tau_bar = pads.stub_tree(oc.cfg, s.root)
    out = refresh_storage_pads(s, tau_bar, 1)
    assert out.pads == s.pads and out.pivot_index == 1


def test_refresh_stub_region_and_authority_leaf():
    cfg = W3
    state = dict(FIG1)
    full = pads.build_full(state, cfg)
    s1 = fig1_storage(N1)
    # write inside N1's region and inside a stubbed region
    writes = {1: b"new1", 6: b"new6"}
    tau_bar = pads.apply_writes(pads.prune(full, writes), writes)
    out = refresh_storage_pads(s1, tau_bar, 1)
    state.update(writes)
    assert out.root == pads.build_full(state, cfg).root
    assert pads.lookup(out.pads, 1) == b"new1"
    assert out.pads == pads.prune(pads.build_full(state, cfg), {0, 1})


def test_refresh_errors():
    s1 = fig1_storage(N1)
    other = pads.build_full({0: b"x"}, W3)
    with pytest.raises(pads.RootMismatch):
        refresh_storage_pads(s1, pads.prune(other, {0}), 1)
    with pytest.raises(ValueError):
        refresh_storage_pads(s1, pads.stub_tree(W3, s1.root), 2)


def test_rebuild_from_replicas():
    full = pads.build_full(FIG1, W3)
    reps = [fig1_storage(n) for n in FIG1_STORERS]
    region = AuthorityRegion(N1, FIG1_STORERS, 2, 3)
    rebuilt = rebuild_from_replicas(region, reps, full.root, 0)
    assert rebuilt.pads == authority_prune(full, region)
    with pytest.raises(StorageIncomplete):
        rebuild_from_replicas(region, reps[1:], full.root, 0)
    with pytest.raises(StorageIncomplete):
        rebuild_from_replicas(region, reps, bytes(20), 0)


# -- routing -----------------------------------------------------------------


def test_routing_table_buckets():
    t = RoutingTable(0b1000, 4, kb=2)
    assert not t.add(0b1000)
    assert t.add(0b0000) and t.add(0b0001) and not t.add(0b0010)
    assert t.bucket_index(0b1001) == 0
    for i, b in enumerate(t.buckets):
        assert all(t.bucket_index(p) == i for p in b)


def _overlay(n, w, seed, kb=8, r=3):
    rng = random.Random(seed)
    ids = rng.sample(range(1 << w), n)
    return Overlay(w, r, build_routing_tables(ids, w, kb, rng), tuple(ids)), ids


def test_lookup_from_authority_is_zero_hops():
    ov, ids = _overlay(16, 10, 1)
    key = 77
    a = ov.authorities(key)[0]
    assert ov.lookup(a, key) == (a, 0)


def test_lookup_full_mesh_one_hop():
    ov, ids = _overlay(16, 10, 2, kb=16)
    for key in range(0, 1024, 5):
        for origin in ids:
            auth, hops = ov.lookup(origin, key)
            assert auth in ov.authorities(key) and hops <= 1


@pytest.mark.parametrize("n", [16, 64])
def test_lookup_hop_bound(n):
    ov, ids = _overlay(n, 12, n)
    bound = math.ceil(math.log2(n)) + 2
    rng = random.Random(3)
    for key in range(1 << 12):
        _, hops = ov.lookup(rng.choice(ids), key)
        assert hops <= bound


def test_lookup_failures():
    ov, ids = _overlay(8, 8, 4, r=1)
    key = 5
    ov.offline = set(ov.authorities(key))
    with pytest.raises(LookupFailed):
        ov.lookup(ids[0] if ids[0] not in ov.offline else ids[1], key)
    lonely = Overlay(8, 1, {i: RoutingTable(i, 8) for i in ids}, tuple(ids))
    a = lonely.authorities(key)[0]
    origin = next(i for i in ids if i != a)
    with pytest.raises(LookupFailed):
        lonely.lookup(origin, key)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**20), st.integers(2, 40))
def test_lookup_always_reaches_an_authority(seed, n):
    ov, ids = _overlay(n, 10, seed)
    rng = random.Random(seed)
    for _ in range(20):
        key = rng.randrange(1 << 10)
        auth, _ = ov.lookup(rng.choice(ids), key)
        assert auth in ov.authorities(key)
