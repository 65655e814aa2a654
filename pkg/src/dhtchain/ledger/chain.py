"""The truncated chain and the block creation / validation procedures."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Optional, Sequence

from .. import pads
from ..pads import Empty, Internal, Leaf, Node, Pads, TreeConfig
from .blocks import Block, header_digest, new_block
from .signing import DEFAULT_SCHEME, SignatureScheme
from .transactions import ElementWitness, Invalid, Transaction, run_transactions


class LedgerError(Exception):
    pass


class StaleWitness(LedgerError):
    """The witness pivot block has already left the window."""


class Unfillable(LedgerError):
    pass


class BranchTooLong(LedgerError):
    pass


class BlockRejected(LedgerError):
    pass


class BadChain(BlockRejected):
    pass


class BadHeaderSignature(BadChain):
    pass


class BadTauRoot(BlockRejected):
    pass


class BadTauShape(BlockRejected):
    pass


class BadTxExecution(BlockRejected):
    pass


@dataclass(frozen=True)
class ChainParams:
    d: int = 8
    f: int = 12
    block_time: float = 15.0
    width: int = 160
    digest_size: int = 20

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be at least 2")
        if self.f < 1:
            raise ValueError("f must be at least 1")
        if self.block_time <= 0:
            raise ValueError("block time must be positive")

    @property
    def window(self) -> int:
        return self.d + self.f

    @cached_property
    def tree(self) -> TreeConfig:
        return TreeConfig(self.width, self.digest_size)


@dataclass(frozen=True)
class PivotAdvance:
    """Emitted when the pivot moves; ``tau_bar`` is the post-state of the old pivot block."""

    new_pivot: int
    tau_bar: Pads


def post_state_of(params: ChainParams, scheme: SignatureScheme, block: Block) -> Pads:
    outcomes, writes = run_transactions(params.tree, scheme, block.transactions, pads.leaves(block.tau))
    for tx, outcome in zip(block.transactions, outcomes):
        if isinstance(outcome, Invalid):
            raise BadTxExecution(f"tx {tx.tx_id.hex()[:12]}: {outcome.reason}")
    return pads.apply_writes(block.tau, writes)


class TruncatedChain:
    """The last ``d + f`` blocks with their cached post-state pADSes.

    The window is exactly ``b[l-d-f+1] .. b[l]``. The oldest block is a
    trust anchor: it is accepted as given, only its own transactions are
    re-executed to obtain its post-state.
    """

    def __init__(self, params: ChainParams, anchor: Block, scheme: SignatureScheme = DEFAULT_SCHEME):
        self.params = params
        self.scheme = scheme
        self._blocks: dict[int, Block] = {}
        self._post: dict[int, Pads] = {}
        self._index_by_digest: dict[bytes, int] = {}
        self._tx_index: dict[bytes, int] = {}
        self.start = anchor.index
        self.head_index = anchor.index - 1
        self._push(anchor, post_state_of(params, scheme, anchor))

    # -- window bookkeeping --

    def _push(self, block: Block, post: Pads) -> None:
        self._blocks[block.index] = block
        self._post[block.index] = post
        self._index_by_digest[block.digest] = block.index
        for tid in block.tx_ids:
            self._tx_index[tid] = block.index
        self.head_index = block.index
        while self.head_index - self.start + 1 > self.params.window:
            old = self._blocks.pop(self.start)
            del self._post[self.start]
            del self._index_by_digest[old.digest]
            for tid in old.tx_ids:
                if self._tx_index.get(tid) == self.start:
                    del self._tx_index[tid]
            self.start += 1

    def copy(self) -> "TruncatedChain":
        other = object.__new__(TruncatedChain)
        other.params = self.params
        other.scheme = self.scheme
        other._blocks = dict(self._blocks)
        other._post = dict(self._post)
        other._index_by_digest = dict(self._index_by_digest)
        other._tx_index = dict(self._tx_index)
        other.start = self.start
        other.head_index = self.head_index
        return other

    def rewind(self, index: int) -> "TruncatedChain":
        """A copy holding only the blocks up to ``index``."""
        if not self.start <= index <= self.head_index:
            raise ValueError(f"index {index} outside window [{self.start}, {self.head_index}]")
        other = self.copy()
        for i in range(index + 1, self.head_index + 1):
            blk = other._blocks.pop(i)
            del other._post[i]
            del other._index_by_digest[blk.digest]
            for tid in blk.tx_ids:
                if other._tx_index.get(tid) == i:
                    del other._tx_index[tid]
        other.head_index = index
        return other

    # -- accessors --

    @property
    def head(self) -> Block:
        return self._blocks[self.head_index]

    @property
    def window_start(self) -> int:
        return self.start

    @property
    def pivot_index(self) -> int:
        return max(0, self.head_index - self.params.f)

    def __len__(self) -> int:
        return len(self._blocks)

    def __iter__(self) -> Iterator[Block]:
        for i in range(self.start, self.head_index + 1):
            yield self._blocks[i]

    def block(self, index: int) -> Block:
        return self._blocks[index]

    def tau(self, index: int) -> Pads:
        return self._blocks[index].tau

    def post_state(self, index: int) -> Pads:
        return self._post[index]

    def has_index(self, index: int) -> bool:
        return index in self._blocks

    def index_of(self, digest: bytes) -> Optional[int]:
        return self._index_by_digest.get(digest)

    def contains_tx(self, tx_id: bytes) -> bool:
        return tx_id in self._tx_index

    def check_invariants(self) -> bool:
        if len(self._blocks) > self.params.window:
            return False
        prev: Optional[int] = None
        for i in range(self.start, self.head_index + 1):
            blk = self._blocks[i]
            if prev is not None:
                if blk.parent != self._blocks[prev].digest:
                    return False
                if self._post[prev].root != blk.tau.root:
                    return False
            prev = i
        return True


# -- witnesses ---------------------------------------------------------------


def verify_witness(wit: ElementWitness, chain: TruncatedChain) -> bool:
    i = wit.pivot_index
    if i <= chain.head_index - chain.params.window or i < chain.start:
        raise StaleWitness(f"pivot {i} left the window (head {chain.head_index})")
    if i > chain.head_index:
        return False
    return pads.verify_proof(chain.params.tree, chain.tau(i).root, wit.key, wit.value, wit.proof)


# -- tau construction --------------------------------------------------------


def _fill(cfg: TreeConfig, keys: Sequence[int], sources: list[Node]) -> Node:
    """Populate the skeleton spanned by ``keys`` from ``sources``, newest first.

    A source provides a position when it holds a node there, or an
    ``Empty`` above it. The first provider wins for every leaf and every
    off-path sibling; inner digests are then recomputed and must agree
    with the newest provider of each position.
    """

    def walk(height: int, prefix: int, lo: int, hi: int, nodes: list[Node]) -> Node:
        if not nodes:
            raise Unfillable(f"no source covers height {height} prefix {prefix:#x}")
        newest = nodes[0]
        if lo == hi:
            if isinstance(newest, Empty):
                return newest
            return cfg.stub(newest.digest, height)
        if height == 0:
            for n in nodes:
                if isinstance(n, Leaf):
                    out = n
                    break
                if isinstance(n, Empty):
                    out = cfg.leaf(pads.NULL)
                    break
            else:
                raise Unfillable(f"no value for key {prefix:#x}")
        else:
            left_nodes: list[Node] = []
            right_nodes: list[Node] = []
            for n in nodes:
                if isinstance(n, Internal):
                    left_nodes.append(n.left)
                    right_nodes.append(n.right)
                elif isinstance(n, Empty):
                    e = cfg.empty(height - 1)
                    left_nodes.append(e)
                    right_nodes.append(e)
            mid = ((prefix << 1) | 1) << (height - 1)
            split = lo
            while split < hi and keys[split] < mid:
                split += 1
            out = cfg.internal(walk(height - 1, prefix << 1, lo, split, left_nodes),
                               walk(height - 1, (prefix << 1) | 1, split, hi, right_nodes))
        if out.digest != newest.digest:
            raise Unfillable(f"sources disagree at height {height} prefix {prefix:#x}")
        return out

    return walk(cfg.width, 0, 0, len(keys), sources)


def build_tau(selected: Sequence[Transaction], chain: TruncatedChain) -> Pads:
    """Pre-state pADS of the next block, pruned to the selected transactions' elements.

    Sources are visited from the head backwards: the cached post-state of
    block ``x`` first, then the merged witnesses whose pivot is ``x``.
    """
    cfg = chain.params.tree
    keys: set[int] = set()
    by_pivot: dict[int, Pads] = {}
    for tx in selected:
        keys |= tx.involved
        for w in tx.witnesses:
            piece = pads.pads_from_proof(cfg, w.key, w.value, w.proof)
            prev = by_pivot.get(w.pivot_index)
            try:
                by_pivot[w.pivot_index] = piece if prev is None else pads.merge(prev, piece)
            except pads.PadsError as exc:
                raise Unfillable(f"witnesses at pivot {w.pivot_index} disagree: {exc}") from exc
    sources: list[Node] = []
    for x in range(chain.head_index, chain.start - 1, -1):
        sources.append(chain.post_state(x).node)
        if x in by_pivot:
            sources.append(by_pivot.pop(x).node)
    if by_pivot:
        raise Unfillable(f"witness pivots outside the window: {sorted(by_pivot)}")
    return Pads(cfg, _fill(cfg, sorted(keys), sources))


# -- block creation ----------------------------------------------------------


@dataclass
class BlockAssembly:
    block: Block
    post_state: Pads
    included: list[Transaction] = field(default_factory=list)
    stale: list[Transaction] = field(default_factory=list)
    bad_witness: list[Transaction] = field(default_factory=list)
    invalid: list[tuple[Transaction, str]] = field(default_factory=list)


def assemble_block(chain: TruncatedChain, mempool: Iterable[Transaction], max_txs: int,
                   proposer: int = 0, scheme: Optional[SignatureScheme] = None) -> BlockAssembly:
    """Select FIFO, check witnesses, build tau, execute, drop invalid transactions."""
    scheme = scheme or chain.scheme
    cfg = chain.params.tree
    selected: list[Transaction] = []
    stale: list[Transaction] = []
    bad: list[Transaction] = []
    seen: set[bytes] = set()
    for tx in mempool:
        if len(selected) >= max_txs:
            break
        if tx.tx_id in seen or chain.contains_tx(tx.tx_id):
            continue
        seen.add(tx.tx_id)
        if not tx.witnesses_well_formed():
            bad.append(tx)
            continue
        try:
            ok = all(verify_witness(w, chain) for w in tx.witnesses)
        except StaleWitness:
            stale.append(tx)
            continue
        if not ok:
            bad.append(tx)
            continue
        selected.append(tx)

    tau = build_tau(selected, chain)
    outcomes, writes = run_transactions(cfg, scheme, selected, pads.leaves(tau))
    valid = [tx for tx, o in zip(selected, outcomes) if not isinstance(o, Invalid)]
    invalid = [(tx, o.reason) for tx, o in zip(selected, outcomes) if isinstance(o, Invalid)]
    if invalid:
        used: set[int] = set()
        for tx in valid:
            used |= tx.involved
        tau = pads.prune(tau, used)
    block = new_block(cfg, chain.head_index + 1, chain.head.digest, proposer, valid, tau, scheme)
    return BlockAssembly(block, pads.apply_writes(tau, writes), valid, stale, bad, invalid)


def make_block(chain: TruncatedChain, mempool: Iterable[Transaction], max_txs: int,
               proposer: int = 0, scheme: Optional[SignatureScheme] = None) -> Block:
    return assemble_block(chain, mempool, max_txs, proposer, scheme).block


# -- validation --------------------------------------------------------------


def validate_block(chain: TruncatedChain, block: Block) -> Pads:
    """Check ``block`` as the successor of the chain head; returns its post-state."""
    cfg = chain.params.tree
    if block.index != chain.head_index + 1:
        raise BadChain(f"expected index {chain.head_index + 1}, got {block.index}")
    if block.parent != chain.head.digest:
        raise BadChain("parent digest does not match the head")
    tau = block.tau
    if block.digest != header_digest(cfg, block.index, block.parent, block.proposer,
                                     block.tx_ids, tau.root):
        raise BadChain("header digest mismatch")
    if tau.config != cfg or not pads.check_consistency(tau):
        raise BadTauShape("tau is internally inconsistent")
    if tau.root != chain.post_state(chain.head_index).root:
        raise BadTauRoot("tau root differs from the head post-state root")
    values = pads.leaves(tau)
    if values.keys() != block.involved or not pads.is_canonical(tau):
        raise BadTauShape("tau leaves differ from the involved elements")
    ids = block.tx_ids
    if len(set(ids)) != len(ids) or any(chain.contains_tx(t) for t in ids):
        raise BadTxExecution("duplicate or replayed transaction")
    outcomes, writes = run_transactions(cfg, chain.scheme, block.transactions, values)
    for tx, outcome in zip(block.transactions, outcomes):
        if isinstance(outcome, Invalid):
            raise BadTxExecution(f"tx {tx.tx_id.hex()[:12]}: {outcome.reason}")
    if not chain.scheme.verify(block.proposer, block.digest, block.signature):
        raise BadHeaderSignature("bad proposer signature")
    return pads.apply_writes(tau, writes)


def append_block(chain: TruncatedChain, block: Block, post_state: Optional[Pads] = None) -> Optional[PivotAdvance]:
    if post_state is None:
        post_state = validate_block(chain, block)
    old = chain.pivot_index
    chain._push(block, post_state)
    new = chain.pivot_index
    if new > old and chain.has_index(new - 1):
        return PivotAdvance(new, chain.post_state(new - 1))
    return None


# -- forks -------------------------------------------------------------------


def common_ancestor(a: TruncatedChain, b: TruncatedChain) -> Optional[int]:
    lo = max(a.start, b.start)
    for i in range(min(a.head_index, b.head_index), lo - 1, -1):
        if a.block(i).digest == b.block(i).digest:
            return i
    return None


def fork_choice(candidates: Sequence[TruncatedChain]) -> TruncatedChain:
    """Longest chain; equal lengths go to the smallest head digest."""
    if not candidates:
        raise ValueError("no candidates")
    best = min(candidates, key=lambda c: (-c.head_index, c.head.digest))
    f = best.params.f
    for c in candidates:
        if c is best:
            continue
        anc = common_ancestor(best, c)
        if anc is None or max(best.head_index, c.head_index) - anc > f:
            raise BranchTooLong("branches diverge by more than f blocks")
    return best
