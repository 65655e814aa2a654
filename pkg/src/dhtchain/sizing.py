"""Back-of-the-envelope size and time model for proofs, transactions and sync."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class SizeModelParams:
    key_bits: int = 160
    hash_bytes: int = 20
    bytes_per_element: int = 500
    elements_per_tx: int = 5
    base_tx_bytes: int = 200
    txs_per_block: int = 90
    base_block_bytes: int = 18000
    d: int = 8
    f: int = 12
    bandwidth_bits_per_s: int = 2_000_000

    def __post_init__(self):
        for fl in fields(self):
            if getattr(self, fl.name) <= 0:
                raise ValueError(f"{fl.name} must be positive")


@dataclass(frozen=True)
class SizeReport:
    naive_proof_bytes: int
    tx_bytes: int
    block_overhead_bytes: int
    sync_bytes: int
    sync_seconds: float

    def as_dict(self) -> dict:
        return asdict(self)


def estimate_sizes(p: SizeModelParams = SizeModelParams()) -> SizeReport:
    naive_proof = p.key_bits * p.hash_bytes
    tx = p.base_tx_bytes + p.elements_per_tx * p.bytes_per_element
    overhead = p.txs_per_block * p.elements_per_tx * p.bytes_per_element
    sync = (p.d + p.f) * (p.base_block_bytes + overhead)
    return SizeReport(naive_proof, tx, overhead, sync, 8 * sync / p.bandwidth_bits_per_s)


def modeled_tx_bytes(n_elements: int, base_tx_bytes: int = 200, bytes_per_element: int = 500) -> int:
    return base_tx_bytes + n_elements * bytes_per_element


def modeled_block_bytes(n_txs: int, n_elements: int, base_tx_bytes: int = 200,
                        bytes_per_element: int = 500) -> int:
    """Synthetic block size: a base record per tx plus a fixed cost per involved element."""
    return n_txs * base_tx_bytes + n_elements * bytes_per_element
