"""Transactions, element witnesses and the balance-transfer rules."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Mapping, Optional, Sequence, Union

from ..pads import DecodeError, Proof, TreeConfig, decode_proof, encode_proof
from .signing import SignatureScheme

MAX_BALANCE = (1 << 64) - 1

_KIND_TRANSFER = 1
_KIND_GENERIC = 2


def encode_balance(amount: int) -> bytes:
    """Zero is the null value, so an empty account and a missing one coincide."""
    if amount < 0 or amount > MAX_BALANCE:
        raise ValueError(f"balance {amount} out of range")
    return amount.to_bytes(8, "big") if amount else b""


def decode_balance(value: bytes) -> int:
    if not value:
        return 0
    if len(value) != 8:
        raise ValueError(f"balance must be 8 bytes, got {len(value)}")
    return int.from_bytes(value, "big")


@dataclass(frozen=True)
class ElementWitness:
    key: int
    value: bytes
    proof: Proof
    pivot_index: int


@dataclass(frozen=True)
class Transfer:
    sender: int
    recipient: int
    amount: int
    extra_reads: tuple[int, ...] = ()

    def __post_init__(self):
        if self.sender == self.recipient:
            raise ValueError("sender and recipient must differ")
        if not 0 <= self.amount <= MAX_BALANCE:
            raise ValueError("amount out of range")
        extras = tuple(sorted(set(self.extra_reads) - {self.sender, self.recipient}))
        object.__setattr__(self, "extra_reads", extras)

    @property
    def involved(self) -> frozenset[int]:
        return frozenset((self.sender, self.recipient, *self.extra_reads))


@dataclass(frozen=True)
class Generic:
    """A contract-style update: each write key gets a digest of the read values."""

    sender: int
    reads: tuple[int, ...]
    writes: tuple[int, ...]
    tag: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "reads", tuple(sorted(set(self.reads))))
        object.__setattr__(self, "writes", tuple(sorted(set(self.writes))))
        if not self.writes:
            raise ValueError("generic operation needs at least one write")

    @property
    def involved(self) -> frozenset[int]:
        return frozenset((self.sender, *self.reads, *self.writes))


Operation = Union[Transfer, Generic]


@dataclass(frozen=True)
class Invalid:
    reason: str


@dataclass(frozen=True)
class Transaction:
    op: Operation
    nonce: int
    signature: bytes
    tx_id: bytes
    witnesses: tuple[ElementWitness, ...] = ()

    @cached_property
    def involved(self) -> frozenset[int]:
        return self.op.involved

    @property
    def sender(self) -> int:
        return self.op.sender

    def stripped(self) -> "Transaction":
        return replace(self, witnesses=()) if self.witnesses else self

    def witness_for(self, key: int) -> Optional[ElementWitness]:
        for w in self.witnesses:
            if w.key == key:
                return w
        return None

    def witnesses_well_formed(self) -> bool:
        keys = [w.key for w in self.witnesses]
        return len(keys) == len(set(keys)) and set(keys) == self.involved


# -- encoding ----------------------------------------------------------------


def _keys(cfg: TreeConfig, keys: Sequence[int]) -> bytes:
    return struct.pack(">H", len(keys)) + b"".join(cfg.key_to_bytes(k) for k in keys)


def tx_body(cfg: TreeConfig, op: Operation, nonce: int) -> bytes:
    if isinstance(op, Transfer):
        return (bytes([_KIND_TRANSFER]) + struct.pack(">Q", nonce)
                + cfg.key_to_bytes(op.sender) + cfg.key_to_bytes(op.recipient)
                + struct.pack(">Q", op.amount) + _keys(cfg, op.extra_reads))
    return (bytes([_KIND_GENERIC]) + struct.pack(">Q", nonce) + cfg.key_to_bytes(op.sender)
            + _keys(cfg, op.reads) + _keys(cfg, op.writes)
            + struct.pack(">H", len(op.tag)) + op.tag)


def tx_id(cfg: TreeConfig, body: bytes) -> bytes:
    return cfg.hash(b"tx" + body)


def new_transaction(cfg: TreeConfig, op: Operation, nonce: int, scheme: SignatureScheme,
                    witnesses: Sequence[ElementWitness] = ()) -> Transaction:
    for k in op.involved:
        cfg.check_key(k)
    body = tx_body(cfg, op, nonce)
    return Transaction(op, nonce, scheme.sign(op.sender, body), tx_id(cfg, body),
                       tuple(sorted(witnesses, key=lambda w: w.key)))


def encode_witness(cfg: TreeConfig, w: ElementWitness) -> bytes:
    return (cfg.key_to_bytes(w.key) + struct.pack(">I", len(w.value)) + w.value
            + struct.pack(">Q", w.pivot_index) + encode_proof(cfg, w.proof))


def encode_transaction(cfg: TreeConfig, tx: Transaction, with_witnesses: bool = True) -> bytes:
    body = tx_body(cfg, tx.op, tx.nonce)
    wits = tx.witnesses if with_witnesses else ()
    out = bytearray(struct.pack(">I", len(body)) + body)
    out += struct.pack(">H", len(tx.signature)) + tx.signature
    out += struct.pack(">H", len(wits))
    for w in wits:
        out += encode_witness(cfg, w)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes, pos: int = 0, end: Optional[int] = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise DecodeError("truncated input")
        out = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def key(self, cfg: TreeConfig) -> int:
        return cfg.key_from_bytes(self.take(cfg.key_bytes))

    def keys(self, cfg: TreeConfig) -> tuple[int, ...]:
        n = self.u16()
        keys = tuple(self.key(cfg) for _ in range(n))
        if list(keys) != sorted(set(keys)):
            raise DecodeError("key list not strictly increasing")
        return keys


def _decode_op(cfg: TreeConfig, r: _Reader) -> tuple[Operation, int]:
    kind = r.u8()
    nonce = r.u64()
    try:
        if kind == _KIND_TRANSFER:
            sender, recipient = r.key(cfg), r.key(cfg)
            amount = r.u64()
            extras = r.keys(cfg)
            op: Operation = Transfer(sender, recipient, amount, extras)
            if op.extra_reads != extras:
                raise DecodeError("non-canonical extra reads")
        elif kind == _KIND_GENERIC:
            sender = r.key(cfg)
            reads, writes = r.keys(cfg), r.keys(cfg)
            tag = r.take(r.u16())
            op = Generic(sender, reads, writes, tag)
        else:
            raise DecodeError(f"unknown transaction kind {kind}")
    except ValueError as exc:
        if isinstance(exc, DecodeError):
            raise
        raise DecodeError(str(exc)) from exc
    return op, nonce


def decode_witness(cfg: TreeConfig, r: _Reader) -> ElementWitness:
    key = r.key(cfg)
    value = r.take(r.u32())
    pivot = r.u64()
    proof, r.pos = decode_proof(cfg, key, r.data, r.pos)
    if r.pos > r.end:
        raise DecodeError("truncated proof")
    return ElementWitness(key, value, proof, pivot)


def decode_transaction(cfg: TreeConfig, data: bytes, offset: int = 0,
                       end: Optional[int] = None) -> tuple[Transaction, int]:
    r = _Reader(data, offset, end)
    body_len = r.u32()
    body_start = r.pos
    body_end = body_start + body_len
    if body_end > r.end:
        raise DecodeError("truncated body")
    br = _Reader(data, body_start, body_end)
    op, nonce = _decode_op(cfg, br)
    if br.pos != body_end:
        raise DecodeError("trailing bytes in body")
    body = bytes(data[body_start:body_end])
    r.pos = body_end
    sig = r.take(r.u16())
    n = r.u16()
    wits = tuple(decode_witness(cfg, r) for _ in range(n))
    if [w.key for w in wits] != sorted({w.key for w in wits}):
        raise DecodeError("witnesses not strictly ordered by key")
    return Transaction(op, nonce, sig, tx_id(cfg, body), wits), r.pos


def decode_transaction_exact(cfg: TreeConfig, data: bytes) -> Transaction:
    tx, end = decode_transaction(cfg, data)
    if end != len(data):
        raise DecodeError("trailing bytes after transaction")
    return tx


# -- execution ---------------------------------------------------------------


def _generic_value(cfg: TreeConfig, op: Generic, key: int, values: Mapping[int, bytes]) -> bytes:
    parts = [b"gen", struct.pack(">H", len(op.tag)), op.tag, cfg.key_to_bytes(key)]
    for k in op.reads:
        v = values[k]
        parts.append(struct.pack(">I", len(v)) + v)
    return cfg.hash(b"".join(parts))


def execute_transaction(cfg: TreeConfig, scheme: SignatureScheme, tx: Transaction,
                        values: Mapping[int, bytes]) -> Union[dict[int, bytes], Invalid]:
    """Apply the consensus rules to ``tx`` given the current values of its elements."""
    missing = tx.involved - values.keys()
    if missing:
        return Invalid(f"values missing for {len(missing)} elements")
    if not scheme.verify(tx.sender, tx_body(cfg, tx.op, tx.nonce), tx.signature):
        return Invalid("bad signature")
    op = tx.op
    if isinstance(op, Transfer):
        try:
            src = decode_balance(values[op.sender])
            dst = decode_balance(values[op.recipient])
        except ValueError as exc:
            return Invalid(str(exc))
        if src < op.amount:
            return Invalid("insufficient balance")
        if dst + op.amount > MAX_BALANCE:
            return Invalid("balance overflow")
        return {op.sender: encode_balance(src - op.amount),
                op.recipient: encode_balance(dst + op.amount)}
    return {k: _generic_value(cfg, op, k, values) for k in op.writes}


def run_transactions(cfg: TreeConfig, scheme: SignatureScheme, txs: Sequence[Transaction],
                     values: Mapping[int, bytes]):
    """Execute in order, each transaction seeing earlier writes.

    Returns the per-transaction outcomes and the accumulated write set.
    """
    current = dict(values)
    writes: dict[int, bytes] = {}
    outcomes: list[Union[dict[int, bytes], Invalid]] = []
    for tx in txs:
        result = execute_transaction(cfg, scheme, tx, current)
        outcomes.append(result)
        if not isinstance(result, Invalid):
            current.update(result)
            writes.update(result)
    return outcomes, writes
