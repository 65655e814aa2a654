"""Event trace: tab-separated ``time node event size detail`` lines, and its replay check.

``block`` records carry the full encoded block and the oracle root of its
post-state, so a trace alone is enough to re-validate the whole run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

from .. import pads
from ..ledger import (
    BlockRejected, Transfer, TruncatedChain, append_block, decode_balance, decode_block,
    encode_balance, validate_block,
)
from .config import ConfigError, parse_config


class TraceWriter:
    def __init__(self):
        self.lines: list[str] = []

    def add(self, time: float, node: str, event: str, size: int, detail: str) -> None:
        self.lines.append(f"{time:.6f}\t{node}\t{event}\t{size}\t{detail}")

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()


@dataclass(frozen=True)
class TraceRecord:
    time: float
    node: str
    event: str
    size: int
    detail: str


def parse_trace(text: str) -> list[TraceRecord]:
    out = []
    for n, line in enumerate(text.splitlines(), start=1):
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"line {n}: expected 5 tab-separated fields")
        t, node, event, size, detail = parts
        out.append(TraceRecord(float(t), node, event, int(size), detail))
    return out


def _fields(detail: str) -> dict[str, str]:
    return dict(item.split("=", 1) for item in detail.split(";") if "=" in item)


@dataclass
class VerifyReport:
    ok: bool
    blocks_checked: int
    failing_height: Optional[int] = None
    reason: str = ""


def verify_trace(text: str) -> VerifyReport:
    """Re-validate every block in the trace and re-derive every oracle root.

    The oracle is replayed from the genesis allocation with plain integer
    arithmetic, independent of the validators' pruned trees.
    """
    try:
        records = parse_trace(text)
    except ValueError as exc:
        return VerifyReport(False, 0, None, f"malformed trace: {exc}")
    if len(records) < 2 or records[0].event != "config" or records[1].event != "genesis":
        return VerifyReport(False, 0, None, "trace must start with config and genesis records")
    try:
        cfg = parse_config(records[0].detail.replace(";", "\n"))
    except ConfigError as exc:
        return VerifyReport(False, 0, None, f"bad config record: {exc}")
    params = cfg.chain_params
    tree = params.tree
    try:
        genesis = decode_block(tree, bytes.fromhex(records[1].detail))
        chain = TruncatedChain(params, genesis)
    except (ValueError, BlockRejected) as exc:
        return VerifyReport(False, 0, 0, f"bad genesis: {exc}")
    alloc = {k: decode_balance(v) for k, v in pads.leaves(genesis.tau).items()}
    state = {k: v for k, v in alloc.items() if v}
    full = pads.build_full({k: encode_balance(v) for k, v in state.items()}, tree)
    if full.root != genesis.tau.root:
        return VerifyReport(False, 0, 0, "genesis tau does not match its allocation")
    chains = {genesis.digest: chain}
    oracle = {genesis.digest: (state, full)}
    total = sum(state.values())
    checked = 0
    for rec in records[2:]:
        if rec.event != "block":
            continue
        f = _fields(rec.detail)
        try:
            height = int(f["index"])
            data = bytes.fromhex(f["data"])
            claimed = bytes.fromhex(f["digest"])
            claimed_root = bytes.fromhex(f["oracle"])
        except (KeyError, ValueError) as exc:
            return VerifyReport(False, checked, None, f"malformed block record: {exc}")
        try:
            blk = decode_block(tree, data)
        except pads.DecodeError as exc:
            return VerifyReport(False, checked, height, f"undecodable block: {exc}")
        if blk.index != height or blk.digest != claimed:
            return VerifyReport(False, checked, height, "block digest or index does not match record")
        parent = chains.get(blk.parent)
        if parent is None:
            return VerifyReport(False, checked, height, "unknown parent")
        c = parent.copy()
        try:
            post = validate_block(c, blk)
        except BlockRejected as exc:
            return VerifyReport(False, checked, height, f"{exc.__class__.__name__}: {exc}")
        append_block(c, blk, post)
        st, tr = oracle[blk.parent]
        st = dict(st)
        writes = {}
        for tx in blk.transactions:
            op = tx.op
            if not isinstance(op, Transfer) or st.get(op.sender, 0) < op.amount:
                return VerifyReport(False, checked, height, "oracle cannot replay transaction")
            st[op.sender] = st.get(op.sender, 0) - op.amount
            st[op.recipient] = st.get(op.recipient, 0) + op.amount
            writes[op.sender] = st[op.sender]
            writes[op.recipient] = st[op.recipient]
        tr = pads.apply_writes(tr, {k: encode_balance(v) for k, v in writes.items()})
        st = {k: v for k, v in st.items() if v}
        if sum(st.values()) != total:
            return VerifyReport(False, checked, height, "balance conservation violated")
        if post.root != tr.root or claimed_root != tr.root:
            return VerifyReport(False, checked, height, "post-state root differs from oracle")
        chains[blk.digest] = c
        oracle[blk.digest] = (st, tr)
        checked += 1
    return VerifyReport(True, checked)
