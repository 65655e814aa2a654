"""Pruned authenticated binary prefix trees.

A tree has a fixed height equal to the key width. Key bits are consumed
from the most significant end: bit ``w-1`` selects the child of the root,
bit ``0`` selects the leaf. A ``0`` bit goes left.

Four node kinds exist:

* ``Leaf`` holds a value at height 0.
* ``Internal`` holds two children.
* ``Stub`` holds only the digest of a pruned subtree.
* ``Empty`` stands for a subtree whose leaves are all null; its digest
  comes from a per-level table, so keys below it stay provable.

Nodes are immutable and carry their digest, so equal digests can be
compared without walking. All operations return new trees.
"""

from __future__ import annotations

import hashlib
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

NULL = b""

LEAF_TAG = b"\x00"
INTERNAL_TAG = b"\x01"

# wire tags
_T_LEAF = 0x00
_T_INTERNAL = 0x01
_T_STUB = 0x02
_T_EMPTY = 0x03

LEFT = 0
RIGHT = 1


class PadsError(Exception):
    pass


class KeyPruned(PadsError):
    """The requested key lies below a stub."""


class WriteToPrunedKey(PadsError):
    pass


class RootMismatch(PadsError):
    pass


class InternalInconsistency(PadsError):
    """Two trees with the same root disagree on an inner node."""


class DecodeError(PadsError):
    pass


@dataclass(frozen=True, slots=True)
class Leaf:
    digest: bytes
    value: bytes


@dataclass(frozen=True, slots=True)
class Internal:
    digest: bytes
    left: "Node"
    right: "Node"


@dataclass(frozen=True, slots=True)
class Stub:
    digest: bytes


@dataclass(frozen=True, slots=True)
class Empty:
    digest: bytes
    level: int


Node = Union[Leaf, Internal, Stub, Empty]


class TreeConfig:
    """Key width and hash truncation shared by every tree of a deployment.

    Digests are SHA-256 truncated to ``digest_size`` bytes, with a one-byte
    domain tag separating leaves from inner nodes.
    """

    def __init__(self, width: int = 160, digest_size: int = 20):
        if not 3 <= width <= 160:
            raise ValueError(f"key width must be in [3, 160], got {width}")
        if not 4 <= digest_size <= 32:
            raise ValueError(f"digest size must be in [4, 32], got {digest_size}")
        self.width = width
        self.digest_size = digest_size
        self.key_bytes = (width + 7) // 8
        empties = [Empty(self.leaf_digest(NULL), 0)]
        for level in range(1, width + 1):
            d = empties[-1].digest
            empties.append(Empty(self.internal_digest(d, d), level))
        self._empties = tuple(empties)
        self._empty_digests = {e.digest: e for e in empties}

    def __repr__(self) -> str:
        return f"TreeConfig(width={self.width}, digest_size={self.digest_size})"

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, TreeConfig) and other.width == self.width
                and other.digest_size == self.digest_size)

    def __hash__(self) -> int:
        return hash((self.width, self.digest_size))

    def hash(self, data: bytes) -> bytes:
        return hashlib.sha256(data).digest()[: self.digest_size]

    def leaf_digest(self, value: bytes) -> bytes:
        return hashlib.sha256(LEAF_TAG + value).digest()[: self.digest_size]

    def internal_digest(self, left: bytes, right: bytes) -> bytes:
        return hashlib.sha256(INTERNAL_TAG + left + right).digest()[: self.digest_size]

    def empty_digest(self, level: int) -> bytes:
        if not 0 <= level <= self.width:
            raise ValueError(f"level {level} outside [0, {self.width}]")
        return self._empties[level].digest

    def empty(self, level: int) -> Empty:
        return self._empties[level]

    def leaf(self, value: bytes) -> Leaf:
        return Leaf(self.leaf_digest(value), bytes(value))

    def internal(self, left: Node, right: Node) -> Internal:
        return Internal(self.internal_digest(left.digest, right.digest), left, right)

    def stub(self, digest: bytes, level: int) -> Union[Stub, Empty]:
        """A pruned node, normalized to ``Empty`` when the digest is all-null."""
        empty = self._empties[level]
        if digest == empty.digest:
            return empty
        return Stub(digest)

    def check_key(self, key: int) -> None:
        if not isinstance(key, int) or key < 0 or key >> self.width:
            raise ValueError(f"key {key!r} does not fit in {self.width} bits")

    def key_to_bytes(self, key: int) -> bytes:
        return key.to_bytes(self.key_bytes, "big")

    def key_from_bytes(self, data: bytes) -> int:
        key = int.from_bytes(data, "big")
        if key >> self.width:
            raise DecodeError("key exceeds width")
        return key


DEFAULT_CONFIG = TreeConfig()


def _bit(key: int, height: int) -> int:
    """Branch taken below a node at ``height`` on the way to ``key``."""
    return (key >> (height - 1)) & 1


@dataclass(frozen=True)
class Proof:
    """Sibling digests ordered leaf to root.

    ``path[i]`` is ``(direction, sibling)`` for the node at height ``i``:
    direction tells whether that node is the left or right child of its
    parent.
    """

    key: int
    path: tuple[tuple[int, bytes], ...]


@dataclass(frozen=True)
class Pads:
    config: TreeConfig
    node: Node = field(repr=False)

    @property
    def root(self) -> bytes:
        return self.node.digest

    @property
    def width(self) -> int:
        return self.config.width

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Pads) and self.config == other.config and self.node == other.node

    def __hash__(self) -> int:
        return hash(self.node.digest)


# -- digests -----------------------------------------------------------------


def empty_digest(level: int, config: TreeConfig = DEFAULT_CONFIG) -> bytes:
    return config.empty_digest(level)


def leaf_digest(value: bytes, config: TreeConfig = DEFAULT_CONFIG) -> bytes:
    return config.leaf_digest(value)


def internal_digest(left: bytes, right: bytes, config: TreeConfig = DEFAULT_CONFIG) -> bytes:
    return config.internal_digest(left, right)


def root(p: Pads) -> bytes:
    return p.node.digest


def empty_tree(config: TreeConfig) -> Pads:
    return Pads(config, config.empty(config.width))


def stub_tree(config: TreeConfig, digest: bytes) -> Pads:
    """A root-only pADS."""
    return Pads(config, config.stub(digest, config.width))


# -- construction ------------------------------------------------------------


def build_full(state: Mapping[int, bytes], config: TreeConfig = DEFAULT_CONFIG) -> Pads:
    """Materialize a whole state; all-null subtrees collapse to ``Empty``."""
    for k in state:
        config.check_key(k)
    items = sorted((k, bytes(v)) for k, v in state.items() if v)
    keys = [k for k, _ in items]
    values = [v for _, v in items]

    def build(height: int, prefix: int, lo: int, hi: int) -> Node:
        if lo == hi:
            return config.empty(height)
        if height == 0:
            return config.leaf(values[lo])
        mid = ((prefix << 1) | 1) << (height - 1)
        split = bisect_left(keys, mid, lo, hi)
        return config.internal(
            build(height - 1, prefix << 1, lo, split),
            build(height - 1, (prefix << 1) | 1, split, hi),
        )

    return Pads(config, build(config.width, 0, 0, len(keys)))


# -- queries -----------------------------------------------------------------


def lookup(p: Pads, key: int) -> bytes:
    """Value stored for ``key``; raises ``KeyPruned`` under a stub."""
    node = p.node
    height = p.config.width
    while height:
        if isinstance(node, Internal):
            node = node.right if _bit(key, height) else node.left
            height -= 1
        elif isinstance(node, Empty):
            return NULL
        else:
            raise KeyPruned(f"key {key:#x} is pruned")
    if isinstance(node, Leaf):
        return node.value
    if isinstance(node, Empty):
        return NULL
    raise KeyPruned(f"key {key:#x} is pruned")


def is_provable(p: Pads, key: int) -> bool:
    try:
        lookup(p, key)
    except KeyPruned:
        return False
    return True


def prove(p: Pads, key: int) -> tuple[bytes, Proof]:
    cfg = p.config
    cfg.check_key(key)
    siblings: list[tuple[int, bytes]] = []
    node = p.node
    height = cfg.width
    value: Optional[bytes] = None
    while height:
        if isinstance(node, Internal):
            direction = _bit(key, height)
            if direction:
                siblings.append((RIGHT, node.left.digest))
                node = node.right
            else:
                siblings.append((LEFT, node.right.digest))
                node = node.left
            height -= 1
        elif isinstance(node, Empty):
            while height:
                siblings.append((_bit(key, height), cfg.empty_digest(height - 1)))
                height -= 1
            value = NULL
        else:
            raise KeyPruned(f"key {key:#x} is pruned")
    if value is None:
        if isinstance(node, Leaf):
            value = node.value
        elif isinstance(node, Empty):
            value = NULL
        else:
            raise KeyPruned(f"key {key:#x} is pruned")
    siblings.reverse()
    return value, Proof(key, tuple(siblings))


def _fold(config: TreeConfig, key: int, value: bytes, proof: Proof) -> Optional[bytes]:
    path = proof.path
    if proof.key != key or len(path) != config.width:
        return None
    acc = config.leaf_digest(value)
    for height, entry in enumerate(path, start=1):
        try:
            direction, sibling = entry
        except (TypeError, ValueError):
            return None
        if direction != _bit(key, height) or len(sibling) != config.digest_size:
            return None
        acc = config.internal_digest(sibling, acc) if direction else config.internal_digest(acc, sibling)
    return acc


def verify_proof(config: TreeConfig, root_digest: bytes, key: int, value: bytes, proof: Proof) -> bool:
    return _fold(config, key, value, proof) == root_digest


def root_after_update(config: TreeConfig, proof: Proof, key: int, new_value: bytes) -> bytes:
    digest = _fold(config, key, new_value, proof)
    if digest is None:
        raise ValueError("malformed proof")
    return digest


def pads_from_proof(config: TreeConfig, key: int, value: bytes, proof: Proof) -> Pads:
    """The minimal pADS implied by one proof."""
    if _fold(config, key, value, proof) is None:
        raise ValueError("malformed proof")
    node: Node = config.leaf(value)
    for height, (direction, sibling) in enumerate(proof.path, start=1):
        other = config.stub(sibling, height - 1)
        node = config.internal(other, node) if direction else config.internal(node, other)
    return Pads(config, node)


def leaves(p: Pads) -> dict[int, bytes]:
    """Explicit ``Leaf`` nodes by key; keys covered by ``Empty`` are not listed."""
    out: dict[int, bytes] = {}
    stack: list[tuple[Node, int, int]] = [(p.node, p.config.width, 0)]
    while stack:
        node, height, prefix = stack.pop()
        if isinstance(node, Internal):
            stack.append((node.right, height - 1, (prefix << 1) | 1))
            stack.append((node.left, height - 1, prefix << 1))
        elif isinstance(node, Leaf):
            out[prefix] = node.value
    return out


def node_count(p: Pads) -> int:
    count = 0
    stack: list[Node] = [p.node]
    while stack:
        node = stack.pop()
        count += 1
        if isinstance(node, Internal):
            stack.append(node.left)
            stack.append(node.right)
    return count


# -- pruning and merging -----------------------------------------------------


def prune(p: Pads, keep: Iterable[int], materialize: bool = True) -> Pads:
    """Cut every subtree holding no ``keep`` key down to a single digest.

    With ``materialize`` (the default) each kept key ends up as an explicit
    ``Leaf``, expanding ``Empty`` regions on the way; this canonical form
    is what blocks carry. Without it, ``Empty`` nodes are left whole, which
    keeps storage-role trees small while every key under them stays
    provable.
    """
    cfg = p.config
    keys = sorted(set(keep))
    for k in keys:
        cfg.check_key(k)

    def walk(node: Node, height: int, prefix: int, lo: int, hi: int) -> Node:
        if lo == hi:
            if isinstance(node, (Stub, Empty)):
                return node
            return cfg.stub(node.digest, height)
        if isinstance(node, Stub):
            raise KeyPruned(f"key {keys[lo]:#x} is already pruned")
        if height == 0:
            if isinstance(node, Empty):
                return cfg.leaf(NULL) if materialize else node
            return node
        if isinstance(node, Empty):
            if not materialize:
                return node
            left = right = cfg.empty(height - 1)
        else:
            left, right = node.left, node.right
        mid = ((prefix << 1) | 1) << (height - 1)
        split = bisect_left(keys, mid, lo, hi)
        new_left = walk(left, height - 1, prefix << 1, lo, split)
        new_right = walk(right, height - 1, (prefix << 1) | 1, split, hi)
        if isinstance(node, Internal) and new_left is node.left and new_right is node.right:
            return node
        return cfg.internal(new_left, new_right)

    return Pads(cfg, walk(p.node, cfg.width, 0, 0, len(keys)))


def merge(a: Pads, b: Pads) -> Pads:
    """Union of two pADSes of one state; materialized structure wins."""
    if a.config != b.config:
        raise ValueError("trees use different configurations")
    if a.root != b.root:
        raise RootMismatch("cannot merge pADSes with different roots")
    cfg = a.config

    def walk(x: Node, y: Node, height: int) -> Node:
        if x is y:
            return x
        if x.digest != y.digest:
            raise InternalInconsistency(f"digest disagreement at height {height}")
        if isinstance(x, (Stub, Empty)):
            return y if isinstance(y, (Internal, Leaf)) else x
        if isinstance(y, (Stub, Empty)):
            return x
        if isinstance(x, Leaf):
            return x
        left = walk(x.left, y.left, height - 1)
        right = walk(x.right, y.right, height - 1)
        if left is x.left and right is x.right:
            return x
        if left is y.left and right is y.right:
            return y
        return cfg.internal(left, right)

    return Pads(cfg, walk(a.node, b.node, cfg.width))


def apply_writes(p: Pads, writes: Mapping[int, bytes]) -> Pads:
    """Set leaf values; topology stays the same apart from expanded ``Empty`` regions."""
    cfg = p.config
    items = sorted((k, bytes(v)) for k, v in writes.items())
    keys = [k for k, _ in items]
    for k in keys:
        cfg.check_key(k)

    def walk(node: Node, height: int, prefix: int, lo: int, hi: int) -> Node:
        if lo == hi:
            return node
        if isinstance(node, Stub):
            raise WriteToPrunedKey(f"key {keys[lo]:#x} is pruned")
        if height == 0:
            value = items[lo][1]
            if isinstance(node, Empty) and not value:
                return node
            if isinstance(node, Leaf) and node.value == value:
                return node
            return cfg.leaf(value)
        if isinstance(node, Empty):
            if not any(items[i][1] for i in range(lo, hi)):
                return node
            left = right = cfg.empty(height - 1)
        else:
            left, right = node.left, node.right
        mid = ((prefix << 1) | 1) << (height - 1)
        split = bisect_left(keys, mid, lo, hi)
        new_left = walk(left, height - 1, prefix << 1, lo, split)
        new_right = walk(right, height - 1, (prefix << 1) | 1, split, hi)
        if isinstance(node, Internal) and new_left is node.left and new_right is node.right:
            return node
        return cfg.internal(new_left, new_right)

    return Pads(cfg, walk(p.node, cfg.width, 0, 0, len(keys)))


def is_canonical(p: Pads) -> bool:
    """True when ``p`` equals the canonical pruning to its own explicit leaves."""
    try:
        return prune(p, leaves(p)) == p
    except KeyPruned:
        return False


# -- codec -------------------------------------------------------------------


def encode(p: Pads) -> bytes:
    """Preorder encoding; inner digests are omitted and recomputed on decode."""
    out = bytearray()
    stack: list[Node] = [p.node]
    while stack:
        node = stack.pop()
        if isinstance(node, Internal):
            out.append(_T_INTERNAL)
            stack.append(node.right)
            stack.append(node.left)
        elif isinstance(node, Leaf):
            out.append(_T_LEAF)
            out += len(node.value).to_bytes(4, "big")
            out += node.value
        elif isinstance(node, Stub):
            out.append(_T_STUB)
            out += node.digest
        else:
            out.append(_T_EMPTY)
            out.append(node.level)
    return bytes(out)


def decode(data: bytes, config: TreeConfig = DEFAULT_CONFIG, exact: bool = True) -> Pads:
    pads, end = decode_prefix(data, config, 0)
    if exact and end != len(data):
        raise DecodeError(f"{len(data) - end} trailing bytes")
    return pads


def decode_prefix(data: bytes, config: TreeConfig, offset: int) -> tuple[Pads, int]:
    """Decode one tree starting at ``offset``; returns the tree and the end offset."""
    view = memoryview(data)
    n = len(data)
    dsz = config.digest_size
    pos = offset

    def read(height: int) -> Node:
        nonlocal pos
        if pos >= n:
            raise DecodeError("truncated tree")
        tag = data[pos]
        pos += 1
        if tag == _T_INTERNAL:
            if height == 0:
                raise DecodeError("inner node below leaf depth")
            left = read(height - 1)
            right = read(height - 1)
            return config.internal(left, right)
        if tag == _T_LEAF:
            if height != 0:
                raise DecodeError(f"leaf at height {height}")
            if pos + 4 > n:
                raise DecodeError("truncated leaf length")
            length = int.from_bytes(view[pos:pos + 4], "big")
            pos += 4
            if pos + length > n:
                raise DecodeError("truncated leaf value")
            value = bytes(view[pos:pos + length])
            pos += length
            return config.leaf(value)
        if tag == _T_STUB:
            if pos + dsz > n:
                raise DecodeError("truncated stub")
            digest = bytes(view[pos:pos + dsz])
            pos += dsz
            if digest == config.empty_digest(height):
                raise DecodeError("stub with all-null digest must be encoded as empty")
            return Stub(digest)
        if tag == _T_EMPTY:
            if pos >= n:
                raise DecodeError("truncated empty node")
            level = data[pos]
            pos += 1
            if level != height:
                raise DecodeError(f"empty level {level} at height {height}")
            return config.empty(level)
        raise DecodeError(f"unknown node tag {tag:#x}")

    node = read(config.width)
    return Pads(config, node), pos


def check_consistency(p: Pads) -> bool:
    """Recompute every inner digest and compare with the stored ones."""
    cfg = p.config

    def walk(node: Node, height: int) -> bytes:
        if isinstance(node, Internal):
            if height == 0:
                raise InternalInconsistency("inner node below leaf depth")
            d = cfg.internal_digest(walk(node.left, height - 1), walk(node.right, height - 1))
        elif isinstance(node, Leaf):
            if height:
                raise InternalInconsistency("leaf above leaf depth")
            d = cfg.leaf_digest(node.value)
        elif isinstance(node, Empty):
            if node.level != height:
                raise InternalInconsistency("empty level mismatch")
            d = cfg.empty_digest(height)
        else:
            d = node.digest
        if d != node.digest:
            raise InternalInconsistency(f"stale digest at height {height}")
        return d

    try:
        walk(p.node, cfg.width)
    except InternalInconsistency:
        return False
    return True


# -- debugging ---------------------------------------------------------------


def render(p: Pads, digest_chars: int = 8) -> str:
    """Indented text dump, one node per line."""
    width = p.config.width
    lines: list[str] = []

    def label(prefix: int, depth: int) -> str:
        return format(prefix, f"0{depth}b") if depth else "-"

    def walk(node: Node, depth: int, prefix: int) -> None:
        pad = "  " * depth
        where = label(prefix, depth)
        short = node.digest.hex()[:digest_chars]
        if isinstance(node, Internal):
            lines.append(f"{pad}internal {where} {short}")
            walk(node.left, depth + 1, prefix << 1)
            walk(node.right, depth + 1, (prefix << 1) | 1)
        elif isinstance(node, Leaf):
            lines.append(f"{pad}leaf {where} value={node.value.hex() or '-'}")
        elif isinstance(node, Stub):
            lines.append(f"{pad}stub {where} {short}")
        else:
            lines.append(f"{pad}empty {where} level={width - depth}")

    walk(p.node, 0, 0)
    return "\n".join(lines) + "\n"


def encode_proof(config: TreeConfig, proof: Proof) -> bytes:
    """Packed directions (leaf first, LSB first) followed by sibling digests."""
    bits = 0
    for i, (direction, _) in enumerate(proof.path):
        bits |= (direction & 1) << i
    out = bytearray(bits.to_bytes(config.key_bytes, "little"))
    for _, sibling in proof.path:
        out += sibling
    return bytes(out)


def decode_proof(config: TreeConfig, key: int, data: bytes, offset: int = 0) -> tuple[Proof, int]:
    kb = config.key_bytes
    need = kb + config.width * config.digest_size
    if offset + need > len(data):
        raise DecodeError("truncated proof")
    bits = int.from_bytes(data[offset:offset + kb], "little")
    if bits >> config.width:
        raise DecodeError("proof direction bits exceed width")
    pos = offset + kb
    dsz = config.digest_size
    path = []
    for i in range(config.width):
        path.append(((bits >> i) & 1, bytes(data[pos:pos + dsz])))
        pos += dsz
    return Proof(key, tuple(path)), pos
