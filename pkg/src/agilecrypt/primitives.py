"""Shared cryptographic building blocks.

Hashing, keyed MACs, the TLS-1.2-style P_hash expansion, MAC-then-encrypt
record protection (AES-256-CBC with an explicit per-record IV), and the
randomness contract used by every other module.  All operations are pure
given their inputs; only RNG handles carry state.

Constant-time behaviour beyond tag comparison is a documented non-goal.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
import threading
from dataclasses import dataclass, field
from enum import Enum

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import (
    BadMac,
    BadPadding,
    EntropyError,
    ParameterError,
)

MAX_RECORD_PLAINTEXT = 2**14

_AES_BLOCK = 16


class HashId(Enum):
    """Identifier for the two hash functions compiled into the artifact."""

    H256 = "H256"
    H512 = "H512"

    @property
    def digest_size(self) -> int:
        return 32 if self is HashId.H256 else 64

    @property
    def _ctor(self):
        return hashlib.sha256 if self is HashId.H256 else hashlib.sha512


# ---------------------------------------------------------------------------
# Hash / HMAC / PRF
# ---------------------------------------------------------------------------

def hash_data(hash_id: HashId, data: bytes) -> bytes:
    """Digest of fixed length: 32 bytes for H256, 64 for H512."""
    return hash_id._ctor(data).digest()


def hmac_digest(hash_id: HashId, key: bytes, data: bytes) -> bytes:
    """Standard HMAC over the selected hash.  Empty keys are rejected."""
    if len(key) == 0:
        raise ParameterError("hmac key must be non-empty")
    return hmac.new(key, data, hash_id._ctor).digest()


def prf(hash_id: HashId, secret: bytes, label: str, seed: bytes, out_len: int) -> bytes:
    """TLS-1.2-style P_hash expansion of (secret, label, seed) to out_len bytes.

    Prefix-consistent: the n-byte output is a prefix of any longer output
    for the same inputs.
    """
    if out_len < 1:
        raise ParameterError("prf output length must be >= 1")
    ctor = hash_id._ctor
    label_seed = label.encode("ascii") + seed
    a = label_seed
    blocks = []
    produced = 0
    while produced < out_len:
        a = hmac.new(secret, a, ctor).digest()
        block = hmac.new(secret, a + label_seed, ctor).digest()
        blocks.append(block)
        produced += len(block)
    return b"".join(blocks)[:out_len]


# ---------------------------------------------------------------------------
# Record protection: MAC-then-encrypt AES-256-CBC
# ---------------------------------------------------------------------------

@dataclass
class SymmetricKeys:
    """One direction's record-protection keys.

    mac_key length selects the MAC hash (32 bytes for H256, 64 for H512).
    Zeroization is best effort: Python cannot scrub copies made before
    zeroize() is called.
    """

    enc_key: bytearray
    mac_key: bytearray
    iv_seed: bytearray

    def __post_init__(self) -> None:
        self.enc_key = bytearray(self.enc_key)
        self.mac_key = bytearray(self.mac_key)
        self.iv_seed = bytearray(self.iv_seed)
        if len(self.enc_key) != 32:
            raise ParameterError("enc_key must be 32 bytes")
        if len(self.mac_key) not in (32, 64):
            raise ParameterError("mac_key must be 32 or 64 bytes")
        if len(self.iv_seed) != 16:
            raise ParameterError("iv_seed must be 16 bytes")

    @property
    def mac_hash(self) -> HashId:
        return HashId.H256 if len(self.mac_key) == 32 else HashId.H512

    def zeroize(self) -> None:
        for buf in (self.enc_key, self.mac_key, self.iv_seed):
            for i in range(len(buf)):
                buf[i] = 0


def _record_iv(keys: SymmetricKeys, seq: int) -> bytes:
    # Deterministic per-record IV; unpredictable to parties without iv_seed.
    return hmac.new(
        bytes(keys.iv_seed), b"record-iv" + struct.pack(">Q", seq), hashlib.sha256
    ).digest()[:_AES_BLOCK]


def _record_mac(keys: SymmetricKeys, seq: int, header: bytes, plaintext: bytes) -> bytes:
    authed = struct.pack(">Q", seq) + header + struct.pack(">I", len(plaintext)) + plaintext
    return hmac.new(bytes(keys.mac_key), authed, keys.mac_hash._ctor).digest()


def seal_record(keys: SymmetricKeys, seq: int, header: bytes, plaintext: bytes) -> bytes:
    """Protect one record: explicit IV || CBC(plaintext || MAC || padding).

    The MAC covers the 64-bit sequence number, the caller's header bytes,
    and the plaintext length, so replay and context confusion are caught
    by open_record.  Size limits are the transport's business: the TLS
    record layer enforces its fragment cap before calling here, while
    keystores and envelopes seal payloads far past it.
    """
    mac = _record_mac(keys, seq, header, plaintext)
    body = plaintext + mac
    # Full CBC padding: pad_len+1 bytes, each holding the value pad_len.
    pad_len = _AES_BLOCK - 1 - (len(body) % _AES_BLOCK)
    body += bytes([pad_len]) * (pad_len + 1)
    iv = _record_iv(keys, seq)
    enc = Cipher(algorithms.AES(bytes(keys.enc_key)), modes.CBC(iv)).encryptor()
    return iv + enc.update(body) + enc.finalize()


def open_record(keys: SymmetricKeys, seq: int, header: bytes, sealed: bytes) -> bytes:
    """Inverse of seal_record.  Raises BadPadding or BadMac on any tamper;
    never returns a value for modified input."""
    mac_len = keys.mac_hash.digest_size
    if len(sealed) < _AES_BLOCK * 2 or len(sealed) % _AES_BLOCK != 0:
        raise BadPadding("sealed record has invalid length")
    iv, ct = sealed[:_AES_BLOCK], sealed[_AES_BLOCK:]
    dec = Cipher(algorithms.AES(bytes(keys.enc_key)), modes.CBC(iv)).decryptor()
    body = dec.update(ct) + dec.finalize()
    pad_len = body[-1]
    if pad_len + 1 > len(body):
        raise BadPadding("padding length exceeds record")
    if any(b != pad_len for b in body[-(pad_len + 1):]):
        raise BadPadding("padding bytes inconsistent")
    body = body[: len(body) - pad_len - 1]
    if len(body) < mac_len:
        raise BadMac("record too short for MAC")
    plaintext, tag = body[:-mac_len], body[-mac_len:]
    expect = _record_mac(keys, seq, header, plaintext)
    if not hmac.compare_digest(tag, expect):
        raise BadMac("record MAC mismatch")
    return plaintext


# ---------------------------------------------------------------------------
# Randomness contract
# ---------------------------------------------------------------------------

class Rng:
    """Source of random bytes.  Subclasses must be safe for concurrent use."""

    def random_bytes(self, n: int) -> bytes:
        raise NotImplementedError

    def randint_below(self, bound: int) -> int:
        """Uniform integer in [0, bound) via rejection sampling."""
        if bound < 1:
            raise ParameterError("bound must be >= 1")
        if bound == 1:
            return 0
        nbytes = (bound.bit_length() + 7) // 8
        limit = (256**nbytes // bound) * bound
        while True:
            v = int.from_bytes(self.random_bytes(nbytes), "big")
            if v < limit:
                return v % bound

    def shuffled(self, n: int) -> list[int]:
        """Uniform permutation of range(n), Fisher-Yates."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint_below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


class SystemRng(Rng):
    """Operating-system entropy.  Failure is loud, never silent zeros."""

    def random_bytes(self, n: int) -> bytes:
        if n < 0:
            raise ParameterError("byte count must be >= 0")
        try:
            out = os.urandom(n)
        except (OSError, NotImplementedError) as exc:
            raise EntropyError(f"system entropy source failed: {exc}") from exc
        if len(out) != n:
            raise EntropyError("system entropy source returned short read")
        return out


@dataclass
class DeterministicRng(Rng):
    """Hash-counter generator for reproducible tests.

    Fixed seed reproduces a fixed stream regardless of read chunking.
    Internally locked so shared handles stay consistent across threads.
    """

    seed: bytes
    _counter: int = field(default=0, init=False)
    _buffer: bytes = field(default=b"", init=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def random_bytes(self, n: int) -> bytes:
        if n < 0:
            raise ParameterError("byte count must be >= 0")
        with self._lock:
            while len(self._buffer) < n:
                block = hashlib.sha256(
                    b"drbg" + struct.pack(">Q", self._counter) + self.seed
                ).digest()
                self._counter += 1
                self._buffer += block
            out, self._buffer = self._buffer[:n], self._buffer[n:]
            return out


_SYSTEM_RNG = SystemRng()


def random_bytes(n: int, rng: Rng | None = None) -> bytes:
    """n random bytes from rng, defaulting to the system source."""
    return (rng or _SYSTEM_RNG).random_bytes(n)
