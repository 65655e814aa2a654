"""Pluggable signatures over transaction bodies and block headers."""

from __future__ import annotations

import hashlib
import hmac
from typing import Protocol


class SignatureScheme(Protocol):
    def sign(self, owner: int, message: bytes) -> bytes: ...

    def verify(self, owner: int, message: bytes, signature: bytes) -> bool: ...


class KeyedHashScheme:
    """Deterministic stand-in for a real signature scheme.

    Each owner's secret is derived from a deployment seed and the owner tag,
    and a signature is an HMAC of the message under that secret. Anyone who
    knows the seed can forge, so this only fits closed simulations. An
    asymmetric scheme with the same two methods can replace it without any
    wire change beyond signature length.
    """

    def __init__(self, seed: bytes = b"dhtchain-test-scheme"):
        self._seed = seed

    def _secret(self, owner: int) -> bytes:
        return hashlib.sha256(self._seed + owner.to_bytes(32, "big")).digest()

    def sign(self, owner: int, message: bytes) -> bytes:
        return hmac.new(self._secret(owner), message, hashlib.sha256).digest()[:16]

    def verify(self, owner: int, message: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(owner, message), signature)


DEFAULT_SCHEME = KeyedHashScheme()
