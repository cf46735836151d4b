"""RSA primitives, hashing and identifier generation.

Keys are 1024-bit RSA with e = 65537, generated from a seeded numpy
Generator so that identical seeds reproduce identical keys.  Encryption
and signing use raw modular exponentiation over a fixed deterministic
padding so that every ciphertext and signature is exactly 128 bytes;
the stable sizes feed the on-chain storage accounting.

Padding layout for a 128-byte block (both directions):

    0x00 0x01 0xff ... 0xff 0x00 <payload>

where payload is the 10-char secret message (encryption) or the SHA-256
digest of the signed message (signatures).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import gmpy2
import numpy as np

MODULUS_BITS = 1024
MODULUS_BYTES = MODULUS_BITS // 8
EXPONENT = 65537
EXPONENT_BYTES = 4
PUBLIC_KEY_BYTES = MODULUS_BYTES + EXPONENT_BYTES

SECRET_MESSAGE_LEN = 10
HEX_ALPHABET = "0123456789abcdef"
WARNING_MESSAGE = "Wrong Record"

_PAD_PREFIX = b"\x00\x01"


class CryptoError(ValueError):
    """Raised when decryption or block unpadding fails."""


@dataclass(frozen=True)
class RsaPublicKey:
    n: int
    e: int = EXPONENT

    def to_bytes(self) -> bytes:
        """Big-endian (modulus, exponent) encoding, fixed width."""
        return self.n.to_bytes(MODULUS_BYTES, "big") + self.e.to_bytes(EXPONENT_BYTES, "big")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "RsaPublicKey":
        if len(raw) != PUBLIC_KEY_BYTES:
            raise CryptoError(f"public key must be {PUBLIC_KEY_BYTES} bytes, got {len(raw)}")
        n = int.from_bytes(raw[:MODULUS_BYTES], "big")
        e = int.from_bytes(raw[MODULUS_BYTES:], "big")
        return cls(n, e)

    def fingerprint(self) -> bytes:
        """SHA-256 of the canonical key encoding; used as the on-chain key reference."""
        return hashlib.sha256(self.to_bytes()).digest()


@dataclass(frozen=True)
class RsaPrivateKey:
    n: int
    e: int
    d: int
    p: int
    q: int
    # CRT precomputation
    dp: int = field(repr=False, default=0)
    dq: int = field(repr=False, default=0)
    qinv: int = field(repr=False, default=0)

    def _private_op(self, x: int) -> int:
        m1 = int(gmpy2.powmod(x % self.p, self.dp, self.p))
        m2 = int(gmpy2.powmod(x % self.q, self.dq, self.q))
        h = (self.qinv * (m1 - m2)) % self.p
        return m2 + h * self.q


@dataclass(frozen=True)
class KeyPair:
    public_key: RsaPublicKey
    private_key: RsaPrivateKey


def _random_odd(bits: int, rng: np.random.Generator) -> int:
    raw = int.from_bytes(rng.bytes(bits // 8), "big")
    return raw | (1 << (bits - 1)) | (1 << (bits - 2)) | 1


def _generate_prime(bits: int, rng: np.random.Generator) -> int:
    while True:
        candidate = _random_odd(bits, rng)
        if gmpy2.is_prime(candidate):
            return candidate


def generate_keypair(rng: np.random.Generator) -> KeyPair:
    """Generate a 1024-bit RSA keypair deterministically from `rng`."""
    while True:
        p = _generate_prime(MODULUS_BITS // 2, rng)
        q = _generate_prime(MODULUS_BITS // 2, rng)
        if p == q:
            continue
        phi = (p - 1) * (q - 1)
        if gmpy2.gcd(EXPONENT, phi) != 1:
            continue
        n = p * q
        d = int(gmpy2.invert(EXPONENT, phi))
        priv = RsaPrivateKey(
            n=n, e=EXPONENT, d=d, p=p, q=q,
            dp=d % (p - 1), dq=d % (q - 1), qinv=int(gmpy2.invert(q, p)),
        )
        return KeyPair(RsaPublicKey(n), priv)


def hex_string(rng: np.random.Generator, length: int) -> str:
    digits = rng.integers(0, 16, size=length)
    return "".join(HEX_ALPHABET[d] for d in digits)


def new_secret_message(rng: np.random.Generator) -> str:
    """Fresh 10-hex-char secret; the keyspace holds ~1.1e12 messages."""
    return hex_string(rng, SECRET_MESSAGE_LEN)


def new_device_id(rng: np.random.Generator) -> str:
    return hex_string(rng, 10)


def _pad_block(payload: bytes) -> int:
    if len(payload) > MODULUS_BYTES - 11:
        raise CryptoError(f"payload too long: {len(payload)} bytes")
    fill = MODULUS_BYTES - len(_PAD_PREFIX) - 1 - len(payload)
    block = _PAD_PREFIX + b"\xff" * fill + b"\x00" + payload
    return int.from_bytes(block, "big")


def _unpad_block(value: int) -> bytes:
    block = value.to_bytes(MODULUS_BYTES, "big")
    if not block.startswith(_PAD_PREFIX):
        raise CryptoError("bad padding prefix")
    try:
        sep = block.index(b"\x00", len(_PAD_PREFIX))
    except ValueError:
        raise CryptoError("missing padding separator") from None
    if block[len(_PAD_PREFIX):sep] != b"\xff" * (sep - len(_PAD_PREFIX)):
        raise CryptoError("bad padding fill")
    return block[sep + 1:]


def encrypt(public_key: RsaPublicKey, message: str) -> bytes:
    """Encrypt a secret message; the ciphertext is always 128 bytes."""
    m = _pad_block(message.encode("ascii"))
    c = int(gmpy2.powmod(m, public_key.e, public_key.n))
    return c.to_bytes(MODULUS_BYTES, "big")


def decrypt(private_key: RsaPrivateKey, ciphertext: bytes) -> str:
    if len(ciphertext) != MODULUS_BYTES:
        raise CryptoError(f"ciphertext must be {MODULUS_BYTES} bytes")
    m = private_key._private_op(int.from_bytes(ciphertext, "big"))
    payload = _unpad_block(m)
    try:
        return payload.decode("ascii")
    except UnicodeDecodeError:
        raise CryptoError("decrypted payload is not ascii") from None


def sign(private_key: RsaPrivateKey, message: str) -> bytes:
    """Sign a message (secret or warning); the signature is always 128 bytes."""
    digest = hashlib.sha256(message.encode("ascii")).digest()
    m = _pad_block(digest)
    s = private_key._private_op(m)
    return s.to_bytes(MODULUS_BYTES, "big")


def verify(public_key: RsaPublicKey, message: str, signature: bytes) -> bool:
    if len(signature) != MODULUS_BYTES:
        return False
    recovered = int(gmpy2.powmod(int.from_bytes(signature, "big"), public_key.e, public_key.n))
    digest = hashlib.sha256(message.encode("ascii")).digest()
    try:
        return recovered == _pad_block(digest)
    except CryptoError:
        return False


def content_hash(content: bytes, timestamp: int) -> str:
    """SHA-256 of (content || timestamp) as 64 hex chars."""
    ts = int(timestamp).to_bytes(4, "big")
    return hashlib.sha256(content + ts).hexdigest()
