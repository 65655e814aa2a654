import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhtchain import pads
from dhtchain.pads import (
    Empty, Internal, Leaf, Stub, TreeConfig, apply_writes, build_full, decode,
    encode, merge, prove, prune, root_after_update, verify_proof,
)

from .oracles import empty_root, full_proof, full_root

W3 = TreeConfig(width=3)
FIG1_STATE = {i: f"v{i}".encode() for i in range(8)}


def random_state(rng, width, density=0.4):
    return {k: rng.randbytes(rng.randint(1, 6)) for k in range(1 << width) if rng.random() < density}


@pytest.fixture
def fig1():
    return build_full(FIG1_STATE, W3)


def test_empty_digest_base_and_step():
    cfg = TreeConfig(width=4)
    assert cfg.empty_digest(0) == cfg.leaf_digest(b"")
    assert cfg.empty_digest(1) == cfg.internal_digest(cfg.empty_digest(0), cfg.empty_digest(0))
    assert build_full({}, cfg).root == cfg.empty_digest(4)
    assert cfg.empty_digest(4) == empty_root(4)
    with pytest.raises(ValueError):
        cfg.empty_digest(5)
    with pytest.raises(ValueError):
        cfg.empty_digest(-1)


def test_digest_order_and_tag_separation():
    rng = random.Random(1)
    cfg = pads.DEFAULT_CONFIG
    for _ in range(1000):
        a, b = rng.randbytes(20), rng.randbytes(20)
        assert cfg.internal_digest(a, b) != cfg.internal_digest(b, a)
        v = rng.randbytes(40)
        assert cfg.leaf_digest(v) != cfg.internal_digest(v[:20], v[20:])
    assert cfg.leaf_digest(b"x") == cfg.leaf_digest(b"x")
    assert len(cfg.leaf_digest(b"x")) == 20


def test_configurable_digest_length():
    cfg = TreeConfig(width=8, digest_size=32)
    t = build_full({3: b"a"}, cfg)
    assert len(t.root) == 32
    assert t.root == full_root({3: b"a"}, 8, size=32)


def test_build_full_matches_oracle():
    rng = random.Random(2)
    for width in (3, 5, 8):
        for _ in range(20):
            s = random_state(rng, width)
            assert build_full(s, TreeConfig(width)).root == full_root(s, width)


def test_build_full_single_key_differs_from_empty():
    cfg = TreeConfig(width=6)
    assert build_full({9: b"\x01"}, cfg).root != cfg.empty_digest(6)
    with pytest.raises(ValueError):
        build_full({64: b"x"}, cfg)


def test_fig1_prunings_share_root(fig1):
    n1 = prune(fig1, {0, 1})
    n2 = prune(fig1, {4, 5})
    assert n1.root == n2.root == fig1.root == full_root(FIG1_STATE, 3)
    # N1: left-left subtree materialized, everything else a stub
    assert isinstance(n1.node.right, Stub)
    assert isinstance(n1.node.left.right, Stub)
    assert isinstance(n1.node.left.left.left, Leaf)
    assert isinstance(n2.node.left, Stub)
    assert isinstance(n2.node.right.right, Stub)
    assert pads.leaves(n1) == {0: b"v0", 1: b"v1"}
    assert pads.leaves(n2) == {4: b"v4", 5: b"v5"}


def test_fig1_authority_proofs(fig1):
    n1 = prune(fig1, {0, 1})
    for k in (0, 1):
        v, pf = prove(n1, k)
        assert verify_proof(W3, n1.root, k, v, pf)
        assert pf.path == full_proof(FIG1_STATE, 3, k)
    with pytest.raises(pads.KeyPruned):
        prove(n1, 4)


def test_prove_under_empty_uses_empty_digests():
    cfg = TreeConfig(width=6)
    state = {0: b"a", 63: b"b"}
    t = build_full(state, cfg)
    v, pf = prove(t, 20)
    assert v == b""
    assert pf.path == full_proof(state, 6, 20)
    assert verify_proof(cfg, t.root, 20, v, pf)


def test_verify_rejects_mutations():
    rng = random.Random(3)
    cfg = TreeConfig(width=8)
    state = random_state(rng, 8)
    t = build_full(state, cfg)
    for _ in range(1000):
        k = rng.randrange(256)
        v, pf = prove(t, k)
        if rng.random() < 0.5 and v:
            i = rng.randrange(len(v) * 8)
            bad_v = bytearray(v)
            bad_v[i // 8] ^= 1 << (i % 8)
            assert not verify_proof(cfg, t.root, k, bytes(bad_v), pf)
        else:
            h = rng.randrange(8)
            d, sib = pf.path[h]
            i = rng.randrange(len(sib) * 8)
            bad = bytearray(sib)
            bad[i // 8] ^= 1 << (i % 8)
            path = list(pf.path)
            path[h] = (d, bytes(bad))
            assert not verify_proof(cfg, t.root, k, v, pads.Proof(k, tuple(path)))
        other = (k + rng.randrange(1, 256)) % 256
        assert not verify_proof(cfg, t.root, other, v, pads.Proof(other, pf.path))


def test_verify_malformed_proof_is_false():
    cfg = TreeConfig(width=4)
    t = build_full({1: b"x"}, cfg)
    v, pf = prove(t, 1)
    assert not verify_proof(cfg, t.root, 1, v, pads.Proof(1, pf.path[:-1]))
    flipped = ((1 - pf.path[0][0], pf.path[0][1]),) + pf.path[1:]
    assert not verify_proof(cfg, t.root, 1, v, pads.Proof(1, flipped))
    assert not verify_proof(cfg, t.root, 1, v, pads.Proof(1, (("x",),) * 4))


def test_root_after_update():
    rng = random.Random(4)
    cfg = TreeConfig(width=7)
    for _ in range(100):
        state = random_state(rng, 7)
        t = build_full(state, cfg)
        k = rng.randrange(128)
        v, pf = prove(t, k)
        assert root_after_update(cfg, pf, k, v) == t.root
        new = rng.choice([b"", rng.randbytes(3)])
        expected = dict(state)
        expected[k] = new
        r1 = root_after_update(cfg, pf, k, new)
        assert r1 == full_root(expected, 7)
        # second update from a proof against the updated state
        t1 = build_full(expected, cfg)
        k2 = rng.randrange(128)
        _, pf2 = prove(t1, k2)
        expected[k2] = b"zz"
        assert root_after_update(cfg, pf2, k2, b"zz") == full_root(expected, 7)


def test_prune_keep_all_and_invalid_keep():
    cfg = TreeConfig(width=4)
    state = {k: bytes([k + 1]) for k in range(16)}
    t = build_full(state, cfg)
    assert prune(t, range(16)) == t
    half = prune(t, {1})
    with pytest.raises(pads.KeyPruned):
        prune(half, {1, 9})


def test_prune_random_preserves_root_and_hides_others():
    rng = random.Random(5)
    cfg = TreeConfig(width=8)
    for _ in range(50):
        state = random_state(rng, 8, density=0.2)
        t = build_full(state, cfg)
        keep = set(rng.sample(range(256), rng.randint(0, 10)))
        p = prune(t, keep)
        assert p.root == t.root
        assert set(pads.leaves(p)) == keep
        for k in keep:
            assert pads.lookup(p, k) == state.get(k, b"")
        for k in rng.sample(range(256), 20):
            if k in keep:
                continue
            # only all-null regions remain provable outside the keep set
            if pads.is_provable(p, k):
                assert state.get(k, b"") == b""
            else:
                with pytest.raises(pads.KeyPruned):
                    prove(p, k)


def test_prune_without_materialize_keeps_empty_regions():
    cfg = TreeConfig(width=8)
    t = build_full({200: b"x"}, cfg)
    p = prune(t, {3, 4}, materialize=False)
    assert isinstance(p.node.left, Empty)
    assert pads.is_provable(p, 100)
    assert prune(t, {3, 4}).node.left != p.node.left


def test_merge_fig1(fig1):
    n1 = prune(fig1, {0, 1})
    n2 = prune(fig1, {4, 5})
    m = merge(n1, n2)
    assert m.root == fig1.root
    assert m == prune(fig1, {0, 1, 4, 5})
    for k in (0, 1, 4, 5):
        assert verify_proof(W3, fig1.root, k, *prove(m, k))
    assert merge(n1, n1) == n1


def test_merge_rejects_other_state_and_forgery(fig1):
    other = build_full({0: b"zz"}, W3)
    with pytest.raises(pads.RootMismatch):
        merge(prune(fig1, {0}), prune(other, {0}))
    n1 = prune(fig1, {0, 1})
    forged_leaf = W3.leaf(b"evil")
    # same claimed root, inner node replaced without rehashing
    bad_inner = Internal(n1.node.left.digest, Internal(n1.node.left.left.digest, forged_leaf, n1.node.left.left.right), n1.node.left.right)
    bad = pads.Pads(W3, Internal(n1.node.digest, bad_inner, n1.node.right))
    with pytest.raises(pads.InternalInconsistency):
        merge(n1, bad)


def test_merge_commutative_associative():
    rng = random.Random(6)
    cfg = TreeConfig(width=6)
    for _ in range(50):
        state = random_state(rng, 6, 0.3)
        t = build_full(state, cfg)
        a, b, c = (prune(t, rng.sample(range(64), 3)) for _ in range(3))
        assert merge(a, b) == merge(b, a)
        assert merge(merge(a, b), c) == merge(a, merge(b, c))


def test_apply_writes_matches_oracle_and_commutes_with_pruning():
    rng = random.Random(7)
    cfg = TreeConfig(width=8)
    for _ in range(50):
        state = random_state(rng, 8, 0.2)
        t = build_full(state, cfg)
        assert apply_writes(t, {}).root == t.root
        ws = {k: rng.choice([b"", rng.randbytes(4)]) for k in rng.sample(range(256), 6)}
        expected = {**state, **ws}
        assert apply_writes(t, ws).root == full_root(expected, 8)
        p = prune(t, set(ws) | {rng.randrange(256)})
        assert apply_writes(p, ws).root == full_root(expected, 8)


def test_apply_writes_keeps_topology_and_input():
    cfg = TreeConfig(width=4)
    t = build_full({k: b"x" for k in range(16)}, cfg)
    p = prune(t, {2, 3})
    q = apply_writes(p, {2: b"", 3: b"y"})
    assert set(pads.leaves(q)) == {2, 3}
    assert pads.leaves(q)[2] == b""
    assert pads.leaves(p) == {2: b"x", 3: b"x"}
    with pytest.raises(pads.WriteToPrunedKey):
        apply_writes(p, {9: b"z"})


def test_encode_empty_tree():
    assert encode(pads.empty_tree(W3)) == b"\x03\x03"


def test_encode_has_stub_digests_not_internal(fig1):
    n1 = prune(fig1, {0, 1})
    data = encode(n1)
    assert n1.node.right.digest in data
    assert n1.node.digest not in data
    assert n1.node.left.digest not in data
    assert decode(data, W3) == n1


def test_decode_errors(fig1):
    data = encode(prune(fig1, {0, 1}))
    with pytest.raises(pads.DecodeError):
        decode(data + b"\x00", W3)
    with pytest.raises(pads.DecodeError):
        decode(data[:-1], W3)
    with pytest.raises(pads.DecodeError):
        decode(b"\x01" * 5, W3)  # depth overflow
    with pytest.raises(pads.DecodeError):
        decode(b"\x03\x02", W3)
    with pytest.raises(pads.DecodeError):
        decode(b"\x07", W3)


def test_codec_roundtrip_random():
    rng = random.Random(8)
    for _ in range(300):
        width = rng.randint(3, 9)
        cfg = TreeConfig(width)
        t = build_full(random_state(rng, width, rng.random() * 0.5), cfg)
        p = prune(t, rng.sample(range(1 << width), rng.randint(0, 5)), materialize=rng.random() < 0.5)
        q = decode(encode(p), cfg)
        assert q == p and q.root == p.root


def test_check_consistency(fig1):
    assert pads.check_consistency(fig1)
    left = fig1.node.left
    bad = pads.Pads(W3, Internal(fig1.node.digest, Internal(left.digest, left.right, left.left), fig1.node.right))
    assert not pads.check_consistency(bad)


def test_is_canonical(fig1):
    assert pads.is_canonical(prune(fig1, {0, 1}))
    # inner nodes with no explicit leaf below should have collapsed to empty
    e = W3.empty
    assert not pads.is_canonical(pads.Pads(W3, W3.internal(W3.internal(W3.internal(e(0), e(0)), e(1)), e(2))))


def test_proof_codec_roundtrip(fig1):
    v, pf = prove(fig1, 5)
    data = pads.encode_proof(W3, pf)
    assert len(data) == 1 + 3 * 20
    back, end = pads.decode_proof(W3, 5, data)
    assert back == pf and end == len(data)


def test_render_golden(fig1, golden):
    golden("fig1_n1.txt", pads.render(prune(fig1, {0, 1})))
    golden("fig1_n2.txt", pads.render(prune(fig1, {4, 5})))


# -- properties ----------------------------------------------------------------

W6 = TreeConfig(width=6)
states = st.dictionaries(st.integers(0, 63), st.binary(min_size=1, max_size=6), max_size=24)
keysets = st.sets(st.integers(0, 63), max_size=8)


@settings(max_examples=150, deadline=None)
@given(states, keysets, keysets)
def test_prune_merge_properties(state, a, b):
    full = build_full(state, W6)
    assert full.root == full_root(state, 6)
    pa, pb = prune(full, a), prune(full, b)
    assert pa.root == pb.root == full.root
    assert merge(pa, pb) == merge(pb, pa) == prune(full, a | b)
    assert decode(encode(pa), W6) == pa


@settings(max_examples=150, deadline=None)
@given(states, st.dictionaries(st.integers(0, 63), st.binary(max_size=4), max_size=6))
def test_apply_writes_on_pruned_matches_oracle(state, writes):
    pruned = prune(build_full(state, W6), writes.keys())
    after = {k: v for k, v in {**state, **writes}.items() if v}
    assert apply_writes(pruned, writes).root == full_root(after, 6)
