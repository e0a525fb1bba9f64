"""Ed25519 keys: 32-byte public keys double as stakeholder addresses."""
from __future__ import annotations

import functools
import secrets
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_RAW_PRIV = serialization.PrivateFormat.Raw


@dataclass(frozen=True)
class Keypair:
    secret: bytes
    public: bytes = field(init=False)
    _key: Ed25519PrivateKey = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.secret) != 32:
            raise ValueError("Ed25519 secret must be 32 bytes")
        key = Ed25519PrivateKey.from_private_bytes(self.secret)
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "public", key.public_key().public_bytes(_RAW, _RAW_PUB))

    @classmethod
    def generate(cls) -> "Keypair":
        return cls(secrets.token_bytes(32))

    @classmethod
    def from_seed(cls, label: str) -> "Keypair":
        """Deterministic key for fixtures and demos. Never use for real deployments."""
        import hashlib

        return cls(hashlib.sha256(b"rlchain-test-seed:" + label.encode()).digest())

    def sign(self, message: bytes) -> bytes:
        return self._key.sign(message)


@functools.lru_cache(maxsize=65536)
def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    # Pure function of its inputs, so memoising is safe; re-verifying a long
    # chain after a local edit only pays for the blocks that changed.
    if len(public) != 32 or len(signature) != 64:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True
