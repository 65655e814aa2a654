"""Blocks and their wire format.

Layout, all integers big-endian::

    index       u64
    parent      digest
    proposer    key
    n_txs       u32, then per tx: u32 length + transaction (no witnesses)
    tau         u32 length + pads encoding
    signature   u16 length + bytes

The header digest is not transmitted; receivers recompute it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

from .. import pads
from ..pads import DecodeError, Pads, TreeConfig
from .signing import SignatureScheme
from .transactions import (
    Transaction, _Reader, decode_transaction, encode_balance, encode_transaction,
)


@dataclass(frozen=True)
class Block:
    index: int
    parent: bytes
    proposer: int
    transactions: tuple[Transaction, ...]
    tau: Pads
    signature: bytes
    digest: bytes

    @cached_property
    def involved(self) -> frozenset[int]:
        out: set[int] = set()
        for tx in self.transactions:
            out |= tx.involved
        return frozenset(out)

    @property
    def tx_ids(self) -> tuple[bytes, ...]:
        return tuple(tx.tx_id for tx in self.transactions)


def header_digest(cfg: TreeConfig, index: int, parent: bytes, proposer: int,
                  tx_ids: Sequence[bytes], tau_root: bytes) -> bytes:
    txs = cfg.hash(b"txs" + struct.pack(">I", len(tx_ids)) + b"".join(tx_ids))
    return cfg.hash(b"hdr" + struct.pack(">Q", index) + parent
                    + cfg.key_to_bytes(proposer) + txs + tau_root)


def new_block(cfg: TreeConfig, index: int, parent: bytes, proposer: int,
              transactions: Sequence[Transaction], tau: Pads, scheme: SignatureScheme) -> Block:
    txs = tuple(tx.stripped() for tx in transactions)
    digest = header_digest(cfg, index, parent, proposer, [t.tx_id for t in txs], tau.root)
    return Block(index, parent, proposer, txs, tau, scheme.sign(proposer, digest), digest)


def genesis_block(cfg: TreeConfig, allocation: Mapping[int, int], scheme: SignatureScheme,
                  proposer: int = 0) -> Block:
    """Block 0: no transactions, tau materializes the whole initial allocation."""
    state = {k: encode_balance(v) for k, v in allocation.items()}
    tau = pads.prune(pads.build_full(state, cfg), state.keys())
    return new_block(cfg, 0, bytes(cfg.digest_size), proposer, (), tau, scheme)


def encode_block(cfg: TreeConfig, block: Block) -> bytes:
    out = bytearray(struct.pack(">Q", block.index))
    out += block.parent
    out += cfg.key_to_bytes(block.proposer)
    out += struct.pack(">I", len(block.transactions))
    for tx in block.transactions:
        data = encode_transaction(cfg, tx, with_witnesses=False)
        out += struct.pack(">I", len(data)) + data
    tau = pads.encode(block.tau)
    out += struct.pack(">I", len(tau)) + tau
    out += struct.pack(">H", len(block.signature)) + block.signature
    return bytes(out)


def decode_block(cfg: TreeConfig, data: bytes) -> Block:
    r = _Reader(data)
    index = r.u64()
    parent = r.take(cfg.digest_size)
    proposer = r.key(cfg)
    n = r.u32()
    txs = []
    for _ in range(n):
        length = r.u32()
        end = r.pos + length
        if end > r.end:
            raise DecodeError("truncated transaction")
        tx, stop = decode_transaction(cfg, data, r.pos, end)
        if stop != end:
            raise DecodeError("transaction length mismatch")
        if tx.witnesses:
            raise DecodeError("block transactions must not carry witnesses")
        txs.append(tx)
        r.pos = end
    tau_len = r.u32()
    tau_end = r.pos + tau_len
    if tau_end > r.end:
        raise DecodeError("truncated tau")
    tau = pads.decode(bytes(data[r.pos:tau_end]), cfg)
    r.pos = tau_end
    sig = r.take(r.u16())
    if r.pos != len(data):
        raise DecodeError("trailing bytes after block")
    txs_t = tuple(txs)
    digest = header_digest(cfg, index, parent, proposer, [t.tx_id for t in txs_t], tau.root)
    return Block(index, parent, proposer, txs_t, tau, sig, digest)
