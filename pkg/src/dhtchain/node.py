"""One network participant: validator, optional storer, proposer and tx creator."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from . import pads
from .dht import (
    AuthorityRegion, Overlay, StorageState, get_witness, new_storage, rebuild_from_replicas,
    refresh_storage_pads,
)
from .ledger import (
    DEFAULT_SCHEME, Block, BlockAssembly, BlockRejected, BranchTooLong, ChainParams,
    ElementWitness, SignatureScheme, Transaction, Transfer, TruncatedChain, append_block,
    assemble_block, decode_block, encode_block, fork_choice, new_transaction, validate_block,
)


class Verdict(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    BUFFERED = "buffered"
    IGNORED = "ignored"


class SyncError(Exception):
    pass


@dataclass(frozen=True)
class TransferIntent:
    sender: int
    recipient: int
    amount: int
    extra_reads: tuple[int, ...] = ()

    def __post_init__(self):
        if self.amount < 0:
            raise ValueError("amount must be nonnegative")

    def operation(self) -> Transfer:
        return Transfer(self.sender, self.recipient, self.amount, self.extra_reads)


@dataclass(frozen=True)
class ProposerSchedule:
    """Seeded stand-in for consensus: one eligible node per slot."""

    nodes: tuple[int, ...]
    seed: int = 0

    def proposer(self, slot: int, eligible: Optional[Sequence[int]] = None) -> int:
        """The slot's proposer, drawn from ``eligible`` (default all nodes) in sorted order."""
        pool = sorted(self.nodes if eligible is None else eligible)
        if not pool:
            raise ValueError("no eligible proposer")
        h = hashlib.sha256(b"slot" + self.seed.to_bytes(8, "big") + slot.to_bytes(8, "big"))
        return pool[int.from_bytes(h.digest()[:8], "big") % len(pool)]


@dataclass
class SyncReport:
    blocks: list[Block]
    encoded_bytes: int

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class WitnessQuery:
    key: int
    authority: int
    hops: int


def plan_queries(overlay: Overlay, origin: int, keys: Sequence[int]) -> list[WitnessQuery]:
    """One lookup per involved key; raises LookupFailed if any key is unreachable."""
    out = []
    for k in sorted(keys):
        auth, hops = overlay.lookup(origin, k)
        out.append(WitnessQuery(k, auth, hops))
    return out


def create_transaction(params: ChainParams, intent: TransferIntent, nonce: int,
                       overlay: Overlay, origin: int, storages: Mapping[int, StorageState],
                       scheme: SignatureScheme = DEFAULT_SCHEME) -> tuple[Transaction, int]:
    """Synchronous variant: query the DHT now and sign; returns the tx and its max hop count."""
    op = intent.operation()
    queries = plan_queries(overlay, origin, op.involved)
    wits = [get_witness(storages[q.authority], q.key) for q in queries]
    tx = new_transaction(params.tree, op, nonce, scheme, wits)
    return tx, max((q.hops for q in queries), default=0)


class SimNode:
    def __init__(self, node_id: int, params: ChainParams, genesis: Block,
                 scheme: SignatureScheme = DEFAULT_SCHEME,
                 region: Optional[AuthorityRegion] = None, validator: bool = True,
                 proposer: bool = True, max_txs: int = 90, chain: Optional[TruncatedChain] = None):
        self.id = node_id
        self.params = params
        self.scheme = scheme
        self.validator = validator
        self.proposer_eligible = proposer
        self.max_txs = max_txs
        self.region = region
        self.chain = chain if chain is not None else TruncatedChain(params, genesis, scheme)
        self.storage: Optional[StorageState] = None
        if region is not None and chain is None:
            self.storage = new_storage(self.chain.post_state(genesis.index), region, genesis.index)
        self.mempool: dict[bytes, Transaction] = {}
        self.side: dict[bytes, Block] = {}
        self.orphans: dict[bytes, list[Block]] = {}
        # included txs with their block index, kept while a reorg could drop them
        self.recent: dict[bytes, tuple[Transaction, int]] = {}
        self.verdicts: list[tuple[int, bytes, Verdict]] = []
        self.needs_sync = False
        self.reorgs = 0
        self.pivot_history: list[int] = []

    @property
    def is_storer(self) -> bool:
        return self.region is not None

    # -- transactions --

    def receive_transaction(self, tx: Transaction) -> bool:
        if tx.tx_id in self.mempool or self.chain.contains_tx(tx.tx_id):
            return False
        self.mempool[tx.tx_id] = tx
        return True

    # -- blocks --

    def on_block(self, block: Block) -> Verdict:
        verdict = self._on_block(block)
        self.verdicts.append((block.index, block.digest, verdict))
        return verdict

    def _known(self, digest: bytes) -> bool:
        return self.chain.index_of(digest) is not None or digest in self.side

    def _on_block(self, block: Block) -> Verdict:
        chain = self.chain
        if self._known(block.digest):
            return Verdict.IGNORED
        if block.index <= chain.head_index - self.params.f:
            return Verdict.IGNORED
        if block.index == chain.head_index + 1 and block.parent == chain.head.digest:
            try:
                post = validate_block(chain, block)
            except BlockRejected:
                return Verdict.REJECTED
            self._extend(block, post)
            self._drain_orphans(block.digest)
            return Verdict.ACCEPTED
        if self._known(block.parent):
            verdict = self._side_block(block)
            if verdict is not Verdict.REJECTED:
                self._drain_orphans(block.digest)
            return verdict
        self.orphans.setdefault(block.parent, []).append(block)
        if block.index > chain.head_index + self.params.window:
            self.needs_sync = True
        return Verdict.BUFFERED

    def _drain_orphans(self, digest: bytes) -> None:
        queue = [digest]
        while queue:
            for child in self.orphans.pop(queue.pop(0), []):
                if self.on_block(child) in (Verdict.ACCEPTED, Verdict.IGNORED):
                    queue.append(child.digest)

    def _branch_to(self, block: Block) -> tuple[int, list[Block]]:
        """Ancestor index on the main chain and the side blocks leading to ``block``."""
        branch = [block]
        cur = block
        while self.chain.index_of(cur.parent) is None:
            cur = self.side[cur.parent]
            branch.append(cur)
        branch.reverse()
        return self.chain.index_of(cur.parent), branch

    def _side_block(self, block: Block) -> Verdict:
        anc, branch = self._branch_to(block)
        if anc < self.chain.window_start:
            return Verdict.IGNORED
        cand = self.chain.rewind(anc)
        for b in branch:
            try:
                post = validate_block(cand, b)
            except BlockRejected:
                return Verdict.REJECTED
            append_block(cand, b, post)
        self.side[block.digest] = block
        try:
            best = fork_choice([self.chain, cand])
        except BranchTooLong:
            return Verdict.IGNORED
        if best is self.chain:
            return Verdict.IGNORED
        self._switch(cand, anc)
        return Verdict.ACCEPTED

    def _switch(self, cand: TruncatedChain, anc: int) -> None:
        old = self.chain
        for i in range(anc + 1, old.head_index + 1):
            blk = old.block(i)
            self.side[blk.digest] = blk
        for i in range(anc + 1, cand.head_index + 1):
            self.side.pop(cand.block(i).digest, None)
        self.chain = cand
        self.reorgs += 1
        for i in range(anc + 1, old.head_index + 1):
            for tid in old.block(i).tx_ids:
                entry = self.recent.pop(tid, None)
                if entry is not None and not cand.contains_tx(tid):
                    self.mempool[tid] = entry[0]
        for i in range(anc + 1, cand.head_index + 1):
            self._absorb(cand.block(i))
        self._catch_up_storage(old)

    def _extend(self, block: Block, post: pads.Pads) -> None:
        append_block(self.chain, block, post)
        self._absorb(block)
        self._catch_up_storage()
        self._trim()

    def _absorb(self, block: Block) -> None:
        for tid in block.tx_ids:
            tx = self.mempool.pop(tid, None)
            if tx is not None:
                self.recent[tid] = (tx, block.index)

    def _catch_up_storage(self, previous: Optional[TruncatedChain] = None) -> None:
        """Advance the storage pivot to the chain's, one block at a time.

        After a reorg the needed post-states may already have left the new
        window; they belong to common blocks, so the previous chain has them.
        """
        if self.storage is None:
            return
        target = self.chain.pivot_index
        if target < self.storage.pivot_index:
            raise AssertionError("pivot block rolled back")
        while self.storage.pivot_index < target:
            p = self.storage.pivot_index
            src = self.chain if self.chain.has_index(p) or previous is None else previous
            self.storage = refresh_storage_pads(self.storage, src.post_state(p), p + 1)
            self.pivot_history.append(p + 1)

    def _trim(self) -> None:
        floor = self.chain.head_index - self.params.window
        for d in [d for d, b in self.side.items() if b.index <= floor]:
            del self.side[d]
        for d in [d for d, bs in self.orphans.items() if all(b.index <= floor for b in bs)]:
            del self.orphans[d]
        final = self.chain.head_index - self.params.f
        for tid in [t for t, (_, i) in self.recent.items() if i <= final]:
            del self.recent[tid]

    # -- mining --

    def mine(self) -> BlockAssembly:
        asm = assemble_block(self.chain, list(self.mempool.values()), self.max_txs,
                             proposer=self.id, scheme=self.scheme)
        for tx in asm.stale + asm.bad_witness:
            self.mempool.pop(tx.tx_id, None)
        for tx, _ in asm.invalid:
            self.mempool.pop(tx.tx_id, None)
        self._extend(asm.block, asm.post_state)
        self.verdicts.append((asm.block.index, asm.block.digest, Verdict.ACCEPTED))
        return asm

    # -- storage --

    def witness(self, key: int) -> ElementWitness:
        if self.storage is None:
            raise AssertionError("node has no storage role")
        return get_witness(self.storage, key)

    # -- sync --

    def export_window(self) -> list[bytes]:
        cfg = self.params.tree
        return [encode_block(cfg, b) for b in self.chain]

    def drop_state(self) -> None:
        self.mempool.clear()
        self.side.clear()
        self.orphans.clear()
        self.recent.clear()
        self.storage = None
        self.needs_sync = True


def sync_chain(params: ChainParams, encoded: Sequence[bytes], scheme: SignatureScheme = DEFAULT_SCHEME,
               trusted_digest: Optional[bytes] = None) -> TruncatedChain:
    """Rebuild a truncated chain from a peer's encoded window.

    The oldest block is the trust anchor: either taken as given or
    checked against ``trusted_digest``. Every later block is fully
    validated against its predecessor.
    """
    if len(encoded) != params.window:
        raise SyncError(f"expected {params.window} blocks, got {len(encoded)}")
    cfg = params.tree
    try:
        blocks = [decode_block(cfg, data) for data in encoded]
    except pads.DecodeError as exc:
        raise SyncError(f"undecodable block: {exc}") from exc
    anchor = blocks[0]
    if trusted_digest is not None and anchor.digest != trusted_digest:
        raise SyncError("anchor block does not match the trusted digest")
    if (not pads.check_consistency(anchor.tau) or not pads.is_canonical(anchor.tau)
            or (anchor.index > 0 and pads.leaves(anchor.tau).keys() != anchor.involved)):
        raise SyncError("anchor tau malformed")
    try:
        chain = TruncatedChain(params, anchor, scheme)
        for b in blocks[1:]:
            append_block(chain, b)
    except BlockRejected as exc:
        raise SyncError(f"block {exc.__class__.__name__}: {exc}") from exc
    return chain


def sync_from_peer(node: SimNode, peer: SimNode, trusted_digest: Optional[bytes] = None,
                   replicas: Sequence[StorageState] = ()) -> SyncReport:
    """Replace ``node``'s chain with one synced from ``peer``; storers also rebuild storage."""
    data = peer.export_window()
    chain = sync_chain(node.params, data, node.scheme, trusted_digest)
    node.chain = chain
    node.needs_sync = False
    node.side.clear()
    node.orphans.clear()
    if node.region is not None:
        p = chain.pivot_index
        node.storage = rebuild_from_replicas(node.region, replicas, chain.tau(p).root, p)
    return SyncReport(list(chain), sum(len(d) for d in data))
