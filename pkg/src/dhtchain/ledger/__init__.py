from .blocks import Block, decode_block, encode_block, genesis_block, header_digest, new_block
from .chain import (
    BadChain, BadHeaderSignature, BadTauRoot, BadTauShape, BadTxExecution, BlockAssembly,
    BlockRejected, BranchTooLong, ChainParams, LedgerError, PivotAdvance, StaleWitness,
    TruncatedChain, Unfillable, append_block, assemble_block, build_tau, common_ancestor,
    fork_choice, make_block, validate_block, verify_witness,
)
from .signing import DEFAULT_SCHEME, KeyedHashScheme, SignatureScheme
from .transactions import (
    ElementWitness, Generic, Invalid, Transaction, Transfer, decode_balance,
    decode_transaction_exact, encode_balance, encode_transaction, execute_transaction,
    new_transaction, run_transactions,
)

__all__ = [
    "Block", "decode_block", "encode_block", "genesis_block", "header_digest", "new_block",
    "BadChain", "BadHeaderSignature", "BadTauRoot", "BadTauShape", "BadTxExecution",
    "BlockAssembly", "BlockRejected", "BranchTooLong", "ChainParams", "LedgerError",
    "PivotAdvance", "StaleWitness", "TruncatedChain", "Unfillable", "append_block",
    "assemble_block", "build_tau", "common_ancestor", "fork_choice", "make_block",
    "validate_block", "verify_witness", "DEFAULT_SCHEME", "KeyedHashScheme", "SignatureScheme",
    "ElementWitness", "Generic", "Invalid", "Transaction", "Transfer", "decode_balance",
    "decode_transaction_exact", "encode_balance", "encode_transaction", "execute_transaction",
    "new_transaction", "run_transactions",
]
