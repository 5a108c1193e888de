"""Cryptographic building blocks: PRF, Ed25519 signatures, padded AES-GCM.

Byte layouts
------------
* Seed, SymmetricKey, RecordId: 32 raw bytes.
* Public key: 32-byte raw Ed25519 key. Signing key: 32-byte Ed25519 seed.
* Signature: 64 raw bytes.
* Ciphertext: ``nonce (12) || body``, where body is AES-256-GCM over the
  padded plaintext followed by the 16-byte tag.

Randomness is drawn from a ``RandomSource`` (any ``n -> bytes`` callable),
``secrets.token_bytes`` by default. Tests and the CLI inject a seeded source
to make runs reproducible.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass
from typing import Callable

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .encoding import canonical_encode
from .errors import DomainError, IntegrityError, PlaintextTooLarge

RandomSource = Callable[[int], bytes]

KEY_SIZE = 32
SEED_SIZE = 32
RECID_SIZE = 32
PK_SIZE = 32
SIG_SIZE = 64
NONCE_SIZE = 12
TAG_SIZE = 16
MIN_BUCKET = 256
MAX_PLAINTEXT = (1 << 24) - 1

default_rng: RandomSource = secrets.token_bytes


def random_bytes(n: int, rng: RandomSource | None = None) -> bytes:
    out = (rng or default_rng)(n)
    if len(out) != n:
        raise RuntimeError("randomness source returned a short read")
    return out


# -- PRF ---------------------------------------------------------------------

def prf_derive(seed: bytes, pk: bytes, recid: bytes, index: int) -> bytes:
    """HMAC-SHA256 keyed by ``seed`` over the canonical encoding of (pk, recid, index)."""
    if index not in (1, 2, 3):
        raise DomainError(f"key index must be 1, 2 or 3, got {index!r}")
    if len(seed) != SEED_SIZE:
        raise DomainError("seed must be 32 bytes")
    if len(recid) != RECID_SIZE:
        raise DomainError("recid must be 32 bytes")
    msg = canonical_encode([pk, recid, index.to_bytes(1, "big")])
    return hmac.new(seed, msg, hashlib.sha256).digest()


# -- signatures --------------------------------------------------------------

@dataclass(frozen=True)
class SigningKeyPair:
    pk: bytes
    sigk: bytes

    def __repr__(self) -> str:
        return f"SigningKeyPair(pk={self.pk.hex()[:16]}...)"


def _pk_bytes(key: Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )


def sig_keygen(rng: RandomSource | None = None) -> SigningKeyPair:
    sigk = random_bytes(32, rng)
    return SigningKeyPair(pk=_pk_bytes(Ed25519PrivateKey.from_private_bytes(sigk)), sigk=sigk)


def public_key_of(sigk: bytes) -> bytes:
    return _pk_bytes(Ed25519PrivateKey.from_private_bytes(sigk))


def sig_sign(sigk: bytes, msg: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(sigk).sign(msg)


def sig_verify(pk: bytes, msg: bytes, sig: bytes) -> bool:
    # malformed keys or signatures are a plain False so hostile input cannot crash a verifier
    if len(pk) != PK_SIZE or len(sig) != SIG_SIZE:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(pk).verify(sig, msg)
    except (InvalidSignature, ValueError):
        return False
    return True


# -- symmetric encryption ----------------------------------------------------

@dataclass(frozen=True)
class Ciphertext:
    nonce: bytes
    body: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.body

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Ciphertext":
        if len(raw) < NONCE_SIZE + TAG_SIZE:
            raise ValueError("ciphertext too short")
        return cls(nonce=raw[:NONCE_SIZE], body=raw[NONCE_SIZE:])


def bucket_size(n: int) -> int:
    """Padded length for an ``n``-byte plaintext (one marker byte is always added)."""
    if n > MAX_PLAINTEXT:
        raise PlaintextTooLarge(f"plaintext of {n} bytes exceeds {MAX_PLAINTEXT}")
    size = MIN_BUCKET
    while size < n + 1:
        size <<= 1
    return size


def _pad(data: bytes) -> bytes:
    size = bucket_size(len(data))
    return data + b"\x80" + b"\x00" * (size - len(data) - 1)


def _unpad(padded: bytes) -> bytes:
    end = padded.rstrip(b"\x00")
    if not end or end[-1] != 0x80:
        raise IntegrityError("bad padding")
    return end[:-1]


def se_encrypt(key: bytes, plaintext: bytes, rng: RandomSource | None = None) -> Ciphertext:
    if len(key) != KEY_SIZE:
        raise DomainError("symmetric key must be 32 bytes")
    nonce = random_bytes(NONCE_SIZE, rng)
    return Ciphertext(nonce=nonce, body=AESGCM(key).encrypt(nonce, _pad(plaintext), None))


def se_decrypt(key: bytes, ct: Ciphertext) -> bytes | None:
    """Return the plaintext, or ``None`` when the key is wrong or the ciphertext was modified."""
    if len(key) != KEY_SIZE or len(ct.nonce) != NONCE_SIZE:
        return None
    try:
        padded = AESGCM(key).decrypt(ct.nonce, ct.body, None)
    except InvalidTag:
        return None
    try:
        return _unpad(padded)
    except IntegrityError:
        return None


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()
