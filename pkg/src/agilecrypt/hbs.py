"""Hash-based signatures: one-time Winternitz chains under a Merkle tree.

A key signs at most 2^h messages.  STATEFUL mode walks a leaf counter and
must never reuse an index; persisting the counter before a signature is
released is the caller's job (see keystore reservations).  STATELESS mode
picks the leaf pseudorandomly from the randomized message digest; at these
desk-scale heights leaf collisions are probable, so the mode is a
functional emulation of stateless signing, not a security claim.

All integers in canonical encodings are big-endian with fixed widths.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

from .errors import KeyExhausted, MalformedEncoding, ParameterError
from .primitives import HashId, Rng, hash_data, prf

__all__ = [
    "HbsMode",
    "HbsParams",
    "HbsKeyPair",
    "HbsSignature",
    "hbs_keygen",
    "hbs_sign",
    "hbs_sign_with_leaf",
    "hbs_verify",
    "hbs_export_public",
    "hbs_parse_public",
    "hbs_serialize_sig",
    "hbs_parse_sig",
]


class HbsMode(Enum):
    STATEFUL = "S"
    STATELESS = "SL"


@dataclass(frozen=True)
class HbsParams:
    """Scheme parameters.  n_h is the per-node digest width in bytes, w the
    chain length base (power of two), h the tree height."""

    n_h: int
    w: int
    h: int
    mode: HbsMode

    def __post_init__(self) -> None:
        if self.n_h not in (16, 32):
            raise ParameterError("n_h must be 16 or 32")
        if self.w < 2 or self.w > 256 or self.w & (self.w - 1):
            raise ParameterError("w must be a power of two in [2, 256]")
        if not 4 <= self.h <= 16:
            raise ParameterError("h must be in [4, 16]")
        if not isinstance(self.mode, HbsMode):
            raise ParameterError("mode must be an HbsMode")

    @property
    def hash_id(self) -> HashId:
        return HashId.H256 if self.n_h == 16 else HashId.H512

    @property
    def log2w(self) -> int:
        return self.w.bit_length() - 1

    @property
    def l1(self) -> int:
        return -(-8 * self.n_h // self.log2w)

    @property
    def l2(self) -> int:
        # l2 = floor(log_w(l1*(w-1))) + 1, computed in exact integers.
        x = self.l1 * (self.w - 1)
        e, v = 0, 1
        while v * self.w <= x:
            v *= self.w
            e += 1
        return e + 1

    @property
    def l(self) -> int:
        return self.l1 + self.l2

    @property
    def leaf_count(self) -> int:
        return 1 << self.h

    @property
    def signature_size(self) -> int:
        return 4 + 32 + self.l * self.n_h + self.h * self.n_h

    @property
    def algorithm_id(self) -> str:
        return f"SPX-TOY-{self.n_h}-{self.w}-{self.h}-{self.mode.value}"

    @classmethod
    def from_algorithm_id(cls, identifier: str) -> HbsParams:
        parts = identifier.split("-")
        if len(parts) != 6 or parts[0] != "SPX" or parts[1] != "TOY":
            raise ParameterError(f"not a hash-based-signature identifier: {identifier!r}")
        try:
            n_h, w, h = int(parts[2]), int(parts[3]), int(parts[4])
            mode = HbsMode(parts[5])
        except ValueError as exc:
            raise ParameterError(f"bad identifier {identifier!r}: {exc}") from exc
        return cls(n_h=n_h, w=w, h=h, mode=mode)


@dataclass
class HbsSignature:
    leaf_index: int
    randomizer: bytes
    wots_sig: list[bytes]
    auth_path: list[bytes]


@dataclass
class HbsKeyPair:
    seed: bytes
    root: bytes
    params: HbsParams
    next_leaf: int = 0
    _levels: list[list[bytes]] | None = field(
        default=None, init=False, repr=False, compare=False
    )

    @classmethod
    def from_seed(
        cls,
        params: HbsParams,
        seed: bytes,
        root: bytes | None = None,
        next_leaf: int = 0,
    ) -> HbsKeyPair:
        """Rebuild a key pair from its master seed.  If root is supplied
        (e.g. from an authenticated store) the tree build is deferred to
        the first signing call."""
        if len(seed) != 32:
            raise ParameterError("seed must be 32 bytes")
        if not 0 <= next_leaf <= params.leaf_count:
            raise ParameterError("next_leaf out of range")
        kp = cls(seed=seed, root=b"", params=params, next_leaf=next_leaf)
        if root is None:
            kp._ensure_tree()
            kp.root = kp._levels[params.h][0]
        else:
            if len(root) != params.n_h:
                raise ParameterError("root length does not match params")
            kp.root = root
        return kp

    def _ensure_tree(self) -> None:
        if self._levels is None:
            self._levels = _build_tree(self.params, self.seed)


# ---------------------------------------------------------------------------
# Chain and tree internals
# ---------------------------------------------------------------------------

def _chain_start(params: HbsParams, seed: bytes, leaf: int, chain: int) -> bytes:
    return prf(params.hash_id, seed, "wots-sk", struct.pack(">IH", leaf, chain), params.n_h)


def _advance(params: HbsParams, chain: int, value: bytes, start: int, steps: int) -> bytes:
    for s in range(start, start + steps):
        value = hash_data(params.hash_id, b"ch" + struct.pack(">HH", chain, s) + value)[
            : params.n_h
        ]
    return value


def _leaf_digest(params: HbsParams, leaf: int, chain_ends: list[bytes]) -> bytes:
    return hash_data(
        params.hash_id, b"leaf" + struct.pack(">I", leaf) + b"".join(chain_ends)
    )[: params.n_h]


def _parent(params: HbsParams, level: int, left: bytes, right: bytes) -> bytes:
    return hash_data(params.hash_id, b"node" + struct.pack(">H", level) + left + right)[
        : params.n_h
    ]


def _build_tree(params: HbsParams, seed: bytes) -> list[list[bytes]]:
    leaves = []
    for leaf in range(params.leaf_count):
        ends = [
            _advance(params, j, _chain_start(params, seed, leaf, j), 0, params.w - 1)
            for j in range(params.l)
        ]
        leaves.append(_leaf_digest(params, leaf, ends))
    levels = [leaves]
    for level in range(1, params.h + 1):
        below = levels[-1]
        levels.append(
            [
                _parent(params, level, below[2 * i], below[2 * i + 1])
                for i in range(len(below) // 2)
            ]
        )
    return levels


def _message_digits(
    params: HbsParams, randomizer: bytes, root: bytes, msg: bytes
) -> tuple[list[int], bytes]:
    """Base-w message digits plus checksum digits, and the raw digest the
    stateless leaf index is drawn from."""
    full = hash_data(params.hash_id, randomizer + root + msg)
    value = int.from_bytes(full[: params.n_h], "big")
    value <<= params.l1 * params.log2w - 8 * params.n_h
    mask = params.w - 1
    digits = [
        (value >> ((params.l1 - 1 - i) * params.log2w)) & mask for i in range(params.l1)
    ]
    checksum = sum(params.w - 1 - d for d in digits)
    digits.extend(
        (checksum >> (i * params.log2w)) & mask for i in range(params.l2 - 1, -1, -1)
    )
    return digits, full


def _stateless_leaf(params: HbsParams, digest: bytes) -> int:
    return int.from_bytes(digest[:2], "big") >> (16 - params.h)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def hbs_keygen(params: HbsParams, rng: Rng) -> HbsKeyPair:
    """Fresh key pair; derives all 2^h one-time keys from a 32-byte seed
    and publishes only the Merkle root."""
    return HbsKeyPair.from_seed(params, rng.random_bytes(32))


def hbs_sign_with_leaf(
    kp: HbsKeyPair, leaf_index: int, msg: bytes, rng: Rng
) -> HbsSignature:
    """Sign using an explicitly chosen leaf.  Callers managing STATEFUL keys
    through reservations use this directly; index-reuse discipline is then
    entirely the caller's responsibility."""
    params = kp.params
    if not 0 <= leaf_index < params.leaf_count:
        raise ParameterError("leaf index out of range")
    kp._ensure_tree()
    randomizer = rng.random_bytes(32)
    digits, digest = _message_digits(params, randomizer, kp.root, msg)
    if params.mode is HbsMode.STATELESS:
        # Stateless leaf choice and digits come from the same digest, so
        # the verifier can recompute both.
        leaf_index = _stateless_leaf(params, digest)
    wots = [
        _advance(params, j, _chain_start(params, kp.seed, leaf_index, j), 0, d)
        for j, d in enumerate(digits)
    ]
    auth = [kp._levels[t][(leaf_index >> t) ^ 1] for t in range(params.h)]
    return HbsSignature(
        leaf_index=leaf_index, randomizer=randomizer, wots_sig=wots, auth_path=auth
    )


def hbs_sign(kp: HbsKeyPair, msg: bytes, rng: Rng) -> HbsSignature:
    """Sign msg.  STATEFUL keys consume the next leaf and advance the
    counter before the signature is released; STATELESS keys derive the
    leaf from the randomized digest."""
    params = kp.params
    if params.mode is HbsMode.STATEFUL:
        if kp.next_leaf >= params.leaf_count:
            raise KeyExhausted(
                f"all {params.leaf_count} one-time leaves of this key are spent"
            )
        leaf = kp.next_leaf
        kp.next_leaf = leaf + 1
        return hbs_sign_with_leaf(kp, leaf, msg, rng)
    return hbs_sign_with_leaf(kp, 0, msg, rng)


def hbs_verify(root: bytes, params: HbsParams, msg: bytes, sig: HbsSignature) -> bool:
    """Complete the chains, fold the authentication path, compare roots.
    Malformed signatures reject; no exception escapes."""
    if not isinstance(sig.leaf_index, int) or not 0 <= sig.leaf_index < params.leaf_count:
        return False
    if len(sig.randomizer) != 32 or len(root) != params.n_h:
        return False
    if len(sig.wots_sig) != params.l or any(len(v) != params.n_h for v in sig.wots_sig):
        return False
    if len(sig.auth_path) != params.h or any(len(v) != params.n_h for v in sig.auth_path):
        return False
    digits, digest = _message_digits(params, sig.randomizer, root, msg)
    if params.mode is HbsMode.STATELESS and sig.leaf_index != _stateless_leaf(
        params, digest
    ):
        return False
    ends = [
        _advance(params, j, value, d, params.w - 1 - d)
        for j, (value, d) in enumerate(zip(sig.wots_sig, digits))
    ]
    node = _leaf_digest(params, sig.leaf_index, ends)
    idx = sig.leaf_index
    for t, sibling in enumerate(sig.auth_path):
        if idx & 1:
            node = _parent(params, t + 1, sibling, node)
        else:
            node = _parent(params, t + 1, node, sibling)
        idx >>= 1
    return node == root


# ---------------------------------------------------------------------------
# Canonical encodings
# ---------------------------------------------------------------------------

def hbs_export_public(kp: HbsKeyPair) -> bytes:
    """n_h u8 || w u16 || h u8 || mode u8 || root[n_h]."""
    p = kp.params
    mode_byte = 0 if p.mode is HbsMode.STATEFUL else 1
    return struct.pack(">BHBB", p.n_h, p.w, p.h, mode_byte) + kp.root


def hbs_parse_public(data: bytes) -> tuple[HbsParams, bytes]:
    if len(data) < 5:
        raise MalformedEncoding("public key header truncated", offset=len(data))
    n_h, w, h, mode_byte = struct.unpack(">BHBB", data[:5])
    if mode_byte not in (0, 1):
        raise MalformedEncoding("unknown mode byte", offset=4)
    try:
        params = HbsParams(
            n_h=n_h, w=w, h=h, mode=HbsMode.STATEFUL if mode_byte == 0 else HbsMode.STATELESS
        )
    except ParameterError as exc:
        raise MalformedEncoding(f"invalid parameters: {exc}", offset=0) from exc
    if len(data) != 5 + n_h:
        raise MalformedEncoding(
            f"public key length {len(data)}, expected {5 + n_h}",
            offset=min(len(data), 5 + n_h),
        )
    return params, data[5:]


def hbs_serialize_sig(sig: HbsSignature) -> bytes:
    return (
        struct.pack(">I", sig.leaf_index)
        + sig.randomizer
        + b"".join(sig.wots_sig)
        + b"".join(sig.auth_path)
    )


def hbs_parse_sig(params: HbsParams, data: bytes) -> HbsSignature:
    expected = params.signature_size
    if len(data) != expected:
        raise MalformedEncoding(
            f"signature length {len(data)}, expected {expected}",
            offset=min(len(data), expected),
        )
    leaf_index = struct.unpack(">I", data[:4])[0]
    randomizer = data[4:36]
    off = 36
    n = params.n_h
    wots = [data[off + i * n : off + (i + 1) * n] for i in range(params.l)]
    off += params.l * n
    auth = [data[off + i * n : off + (i + 1) * n] for i in range(params.h)]
    return HbsSignature(
        leaf_index=leaf_index, randomizer=randomizer, wots_sig=wots, auth_path=auth
    )
