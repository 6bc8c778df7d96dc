"""Symmetric primitives sized for constrained hardware, plus signatures.

The symmetric side leans on a single AES-128 block cipher, the one thing a
constrained provider accelerates:

* MAC: AES-128 in CBC mode with a zero IV over zero-padded input, tag = the
  first 8 bytes of the last block.  Plain CBC-MAC is only safe for fixed
  input formats, so every call site MACs a length-prefixed, fixed-width
  field encoding and nothing else.
* Hash: a Davies-Meyer construction over the same cipher; each padded
  message block keys an encryption of the running state, XORed back in.

Backends and requesters are not constrained and use Ed25519 signatures under
a minimal one-authority certificate model: the authority signs (subject id,
verification key) and everybody holds the authority's verification key out
of band.

All randomness is drawn from injected ``random.Random`` instances so runs
are reproducible; nothing here touches global RNG state.
"""

import hmac
from dataclasses import dataclass
from pathlib import Path
from random import Random

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

BLOCK_BYTES = 16
KEY_BYTES = 16
MAC_BYTES = 8
DIGEST_BYTES = 16
NONCE_BYTES = 16
SIGNATURE_BYTES = 64
PUBLIC_KEY_BYTES = 32
COMMIT_SECRET_BYTES = 4
SUBJECT_ID_BYTES = 4
CERTIFICATE_BYTES = SUBJECT_ID_BYTES + PUBLIC_KEY_BYTES + SIGNATURE_BYTES

_ZERO_BLOCK = bytes(BLOCK_BYTES)


class MalformedSignature(ValueError):
    """Signature blob has the wrong length."""


# ---------------------------------------------------------------------------
# symmetric: CBC-MAC and Davies-Meyer over AES-128
# ---------------------------------------------------------------------------

def _check_key(key: bytes) -> None:
    if len(key) != KEY_BYTES:
        raise ValueError(f"symmetric key must be {KEY_BYTES} bytes, got {len(key)}")


def mac_tag(key: bytes, message: bytes) -> bytes:
    """8-byte CBC-MAC tag over a fixed-format, non-empty message."""
    _check_key(key)
    if not message:
        raise ValueError("refusing to MAC an empty message")
    padded = message + bytes(-len(message) % BLOCK_BYTES)
    encryptor = Cipher(algorithms.AES(key), modes.CBC(_ZERO_BLOCK)).encryptor()
    ciphertext = encryptor.update(padded) + encryptor.finalize()
    return ciphertext[-BLOCK_BYTES:][:MAC_BYTES]


def mac_verify(key: bytes, message: bytes, tag: bytes) -> bool:
    """Constant-time comparison against the expected tag."""
    if len(tag) != MAC_BYTES:
        return False
    return hmac.compare_digest(mac_tag(key, message), tag)


def _encrypt_block(key: bytes, block: bytes) -> bytes:
    encryptor = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return encryptor.update(block) + encryptor.finalize()


def dm_hash(message: bytes) -> bytes:
    """16-byte Davies-Meyer digest of an arbitrary message.

    Padding appends 0x80 then zeros up to a block boundary, so distinct
    inputs never pad to the same block sequence.  The state starts at the
    zero block; each message block keys one encryption of the state, XORed
    back into it.
    """
    padded = message + b"\x80" + bytes(-(len(message) + 1) % BLOCK_BYTES)
    state = _ZERO_BLOCK
    for offset in range(0, len(padded), BLOCK_BYTES):
        block = padded[offset : offset + BLOCK_BYTES]
        encrypted = _encrypt_block(block, state)
        state = bytes(a ^ b for a, b in zip(encrypted, state))
    return state


# ---------------------------------------------------------------------------
# signatures and the one-authority certificate model
# ---------------------------------------------------------------------------

def generate_signing_key(rng: Random) -> Ed25519PrivateKey:
    """Deterministic Ed25519 key from an injected RNG."""
    return Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))


def sign(private_key: Ed25519PrivateKey, message: bytes) -> bytes:
    return private_key.sign(message)


def sig_verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(signature) != SIGNATURE_BYTES:
        raise MalformedSignature(f"signature must be {SIGNATURE_BYTES} bytes, got {len(signature)}")
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except InvalidSignature:
        return False
    return True


@dataclass(frozen=True)
class Certificate:
    """Authority-signed binding of a subject id to a verification key."""

    subject_id: int
    public_key: bytes
    signature: bytes

    def signed_payload(self) -> bytes:
        return self.subject_id.to_bytes(SUBJECT_ID_BYTES, "big") + self.public_key

    def to_bytes(self) -> bytes:
        return self.signed_payload() + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        if len(data) != CERTIFICATE_BYTES:
            raise ValueError(f"certificate must be {CERTIFICATE_BYTES} bytes, got {len(data)}")
        subject_id = int.from_bytes(data[:SUBJECT_ID_BYTES], "big")
        public_key = data[SUBJECT_ID_BYTES : SUBJECT_ID_BYTES + PUBLIC_KEY_BYTES]
        return cls(subject_id, public_key, data[SUBJECT_ID_BYTES + PUBLIC_KEY_BYTES :])


def cert_verify(authority_key: bytes, cert: Certificate) -> bool:
    """Check the authority's signature over (subject id, key)."""
    try:
        return sig_verify(authority_key, cert.signed_payload(), cert.signature)
    except MalformedSignature:
        return False


class CertificateAuthority:
    """Single trust root: one key signs every participant certificate."""

    def __init__(self, private_key: Ed25519PrivateKey):
        self._private_key = private_key
        self.public_key = private_key.public_key().public_bytes_raw()

    @classmethod
    def generate(cls, rng: Random) -> "CertificateAuthority":
        return cls(generate_signing_key(rng))

    def issue(self, subject_id: int, public_key: bytes) -> Certificate:
        if not 0 <= subject_id < 1 << (8 * SUBJECT_ID_BYTES):
            raise ValueError(f"subject id {subject_id} does not fit {SUBJECT_ID_BYTES} bytes")
        if len(public_key) != PUBLIC_KEY_BYTES:
            raise ValueError("verification key must be 32 raw bytes")
        payload = subject_id.to_bytes(SUBJECT_ID_BYTES, "big") + public_key
        return Certificate(subject_id, public_key, sign(self._private_key, payload))


@dataclass(frozen=True)
class Identity:
    """A participant's signing key with its authority-issued certificate."""

    private_key: Ed25519PrivateKey
    certificate: Certificate

    @property
    def subject_id(self) -> int:
        return self.certificate.subject_id

    @property
    def public_key(self) -> bytes:
        return self.certificate.public_key


def new_identity(authority: CertificateAuthority, subject_id: int, rng: Random) -> Identity:
    private_key = generate_signing_key(rng)
    cert = authority.issue(subject_id, private_key.public_key().public_bytes_raw())
    return Identity(private_key, cert)


def new_nonce(rng: Random) -> bytes:
    return rng.randbytes(NONCE_BYTES)


@dataclass(frozen=True)
class TicketCommitment:
    """Hash commitment a requester binds into a ticket request.

    ``secret`` stays with the requester until the ticket is redeemed;
    ``digest`` travels to the backend and into the ticket MAC.
    """

    secret: bytes
    digest: bytes

    @classmethod
    def generate(cls, rng: Random) -> "TicketCommitment":
        secret = rng.randbytes(COMMIT_SECRET_BYTES)
        return cls(secret, dm_hash(secret))


# ---------------------------------------------------------------------------
# key material on disk
# ---------------------------------------------------------------------------

def save_hex(path, data: bytes) -> None:
    Path(path).write_text(data.hex() + "\n")


def load_hex(path) -> bytes:
    return bytes.fromhex(Path(path).read_text().strip())


def load_signing_key(path) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(load_hex(path))
