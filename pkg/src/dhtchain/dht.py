"""The storage role: authority assignment, routing, witness serving and refresh.

Distance is XOR over the key space. A storer is authority for a key when
it is among the ``r`` storers closest to that key. Distinct ids never tie
under XOR for a fixed key, so "ties by smaller id" only matters for the
sort order of equal ids, which uniqueness rules out.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import pads
from .ledger.transactions import ElementWitness
from .pads import Empty, Internal, Leaf, Node, Pads, Stub

NONE, SOME, ALL = 0, 1, 2


class DhtError(Exception):
    pass


class NotAuthority(DhtError):
    pass


class LookupFailed(DhtError):
    pass


class StorageIncomplete(DhtError):
    """Replicas do not cover the whole authority region."""


def xor_distance(a: int, b: int, width: Optional[int] = None) -> int:
    if width is not None:
        limit = 1 << width
        if not (0 <= a < limit and 0 <= b < limit):
            raise ValueError(f"identifiers must be {width}-bit")
    return a ^ b


def authority_set(key: int, nodes: Iterable[int], r: int) -> tuple[int, ...]:
    """The ``min(r, len(nodes))`` ids closest to ``key``, closest first."""
    if r < 1:
        raise ValueError("r must be at least 1")
    ids = sorted(set(nodes))
    if not ids:
        raise ValueError("empty node set")
    return tuple(sorted(ids, key=lambda n: (n ^ key, n))[:r])


def authority_map(keys: Sequence[int], nodes: Sequence[int], r: int) -> np.ndarray:
    """Row ``i`` holds the authorities of ``keys[i]``, closest first (ids as int64).

    Vectorized; requires ids below 2**63.
    """
    ids = np.array(sorted(set(nodes)), dtype=np.int64)
    ks = np.asarray(keys, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty node set")
    dist = np.bitwise_xor(ks[:, None], ids[None, :])
    order = np.argsort(dist, axis=1, kind="stable")[:, :min(r, ids.size)]
    return ids[order]


@dataclass(frozen=True)
class AuthorityRegion:
    """The set of keys a storer holds, described by its id and the other storers."""

    node_id: int
    storers: tuple[int, ...]
    r: int
    width: int

    def __post_init__(self):
        object.__setattr__(self, "storers", tuple(sorted(set(self.storers) | {self.node_id})))
        if self.r < 1:
            raise ValueError("r must be at least 1")

    def coverage(self, prefix: int, height: int) -> int:
        """Whether the subtree ``prefix`` of ``height`` holds none, some or only authority keys.

        Storers are grouped by the high bits of their XOR distance to the
        subtree; groups strictly closer than ours beat us on every key,
        groups farther lose on every key, and our own group is undecided.
        """
        own = (self.node_id >> height) ^ prefix
        closer = same = 0
        for s in self.storers:
            c = (s >> height) ^ prefix
            if c < own:
                closer += 1
            elif c == own:
                same += 1
        if closer >= self.r:
            return NONE
        if closer + same <= self.r:
            return ALL
        return SOME

    def contains(self, key: int) -> bool:
        return self.coverage(key, 0) == ALL


def authority_prune(p: Pads, region: AuthorityRegion) -> Pads:
    """Keep exactly the subtrees that intersect ``region``.

    Regions fully owned are kept as they are, ``Empty`` parts included,
    so null authority keys stay provable without being materialized.
    """
    cfg = p.config

    def walk(node: Node, height: int, prefix: int, cover: int) -> Node:
        if cover != ALL:
            cover = region.coverage(prefix, height)
        if cover == NONE:
            return node if isinstance(node, Empty) else cfg.stub(node.digest, height)
        if cover == ALL or isinstance(node, (Empty, Leaf)):
            if isinstance(node, Stub):
                raise StorageIncomplete(f"subtree {prefix:#x} at height {height} is pruned")
            if cover == ALL and isinstance(node, Internal):
                _check_materialized(node)
            return node
        if isinstance(node, Stub):
            raise StorageIncomplete(f"subtree {prefix:#x} at height {height} is pruned")
        return cfg.internal(walk(node.left, height - 1, prefix << 1, cover),
                            walk(node.right, height - 1, (prefix << 1) | 1, cover))

    return Pads(cfg, walk(p.node, cfg.width, 0, SOME))


def _check_materialized(node: Node) -> None:
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Stub):
            raise StorageIncomplete("authority region contains a pruned subtree")
        if isinstance(n, Internal):
            stack.append(n.left)
            stack.append(n.right)


# -- storage state -----------------------------------------------------------


@dataclass
class StorageState:
    """A storer's pADS, associated with the pre-state of block ``pivot_index``."""

    region: AuthorityRegion
    pads: Pads
    pivot_index: int

    @property
    def root(self) -> bytes:
        return self.pads.root

    def encoded_size(self) -> int:
        return len(pads.encode(self.pads))


def new_storage(full_state: Pads, region: AuthorityRegion, pivot_index: int) -> StorageState:
    return StorageState(region, authority_prune(full_state, region), pivot_index)


def get_witness(storage: StorageState, key: int) -> ElementWitness:
    if not storage.region.contains(key):
        raise NotAuthority(f"node {storage.region.node_id:#x} is not authority for {key:#x}")
    value, proof = pads.prove(storage.pads, key)
    return ElementWitness(key, value, proof, storage.pivot_index)


def refresh_storage_pads(storage: StorageState, tau_bar: Pads, new_pivot: int) -> StorageState:
    """Fold the post-state of the outgoing pivot block into the storage pADS."""
    if new_pivot != storage.pivot_index + 1:
        raise ValueError(f"pivot must advance by one ({storage.pivot_index} -> {new_pivot})")
    cfg = storage.pads.config
    region = storage.region

    def walk(s: Node, t: Node, height: int, prefix: int, cover: int) -> Node:
        if isinstance(t, (Stub, Empty)):
            return s
        if cover != ALL:
            cover = region.coverage(prefix, height)
        if cover == NONE:
            return cfg.stub(t.digest, height)
        if isinstance(t, Leaf):
            return t
        if isinstance(s, Internal):
            sl, sr = s.left, s.right
        elif isinstance(s, Empty):
            sl = sr = cfg.empty(height - 1)
        else:
            raise pads.RootMismatch(f"storage lacks the authority subtree at {prefix:#x}")
        return cfg.internal(walk(sl, t.left, height - 1, prefix << 1, cover),
                            walk(sr, t.right, height - 1, (prefix << 1) | 1, cover))

    if storage.pads.config != tau_bar.config:
        raise pads.RootMismatch("tree configurations differ")
    node = walk(storage.pads.node, tau_bar.node, cfg.width, 0, SOME)
    if node.digest != tau_bar.root:
        raise pads.RootMismatch("refreshed storage root differs from tau_bar")
    return StorageState(region, Pads(cfg, node), new_pivot)


def rebuild_from_replicas(region: AuthorityRegion, replicas: Sequence[StorageState],
                          expected_root: bytes, pivot_index: int) -> StorageState:
    """Reconstruct a storer's pADS from other storers at the same pivot."""
    merged: Optional[Pads] = None
    for rep in replicas:
        if rep.pivot_index != pivot_index or rep.root != expected_root:
            continue
        merged = rep.pads if merged is None else pads.merge(merged, rep.pads)
    if merged is None:
        raise StorageIncomplete("no replica at the requested pivot")
    return StorageState(region, authority_prune(merged, region), pivot_index)


# -- routing -----------------------------------------------------------------


class RoutingTable:
    """k-buckets indexed by the highest differing bit with the owner."""

    def __init__(self, owner: int, width: int, kb: int = 8):
        self.owner = owner
        self.width = width
        self.kb = kb
        self.buckets: list[list[int]] = [[] for _ in range(width)]

    def bucket_index(self, peer: int) -> int:
        return (self.owner ^ peer).bit_length() - 1

    def add(self, peer: int) -> bool:
        if peer == self.owner:
            return False
        bucket = self.buckets[self.bucket_index(peer)]
        if peer in bucket or len(bucket) >= self.kb:
            return False
        bucket.append(peer)
        return True

    def peers(self) -> list[int]:
        return [p for b in self.buckets for p in b]

    def __len__(self) -> int:
        return sum(len(b) for b in self.buckets)


def build_routing_tables(ids: Sequence[int], width: int, kb: int = 8,
                         rng: Optional[random.Random] = None) -> dict[int, RoutingTable]:
    rng = rng or random.Random(0)
    ordered = sorted(ids)
    tables = {}
    for n in ordered:
        t = RoutingTable(n, width, kb)
        others = [m for m in ordered if m != n]
        rng.shuffle(others)
        for m in others:
            t.add(m)
        tables[n] = t
    return tables


@dataclass
class Overlay:
    """The DHT as seen by the simulator: routing tables plus who stores and who is online."""

    width: int
    r: int
    tables: dict[int, RoutingTable]
    storers: tuple[int, ...]
    offline: set[int] = field(default_factory=set)

    def online_storers(self) -> list[int]:
        return [s for s in self.storers if s not in self.offline]

    def authorities(self, key: int) -> tuple[int, ...]:
        return authority_set(key, self.storers, self.r)

    def region(self, node_id: int) -> AuthorityRegion:
        return AuthorityRegion(node_id, self.storers, self.r, self.width)

    def lookup(self, origin: int, key: int) -> tuple[int, int]:
        """Greedy iterative routing towards ``key``; returns (authority, hops)."""
        auth = set(self.authorities(key)) - self.offline
        if not auth:
            raise LookupFailed(f"all authorities for {key:#x} are offline")
        current, hops = origin, 0
        while current not in auth:
            best = current
            best_d = current ^ key
            for p in self.tables[current].peers():
                if p in self.offline:
                    continue
                if p in auth:
                    best, best_d = p, -1
                    break
                if (p ^ key) < best_d:
                    best, best_d = p, p ^ key
            if best == current:
                raise LookupFailed(f"lookup for {key:#x} stuck at {current:#x}")
            current = best
            hops += 1
        return current, hops
