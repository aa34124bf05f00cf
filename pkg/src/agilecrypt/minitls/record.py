"""TLS-1.2-style record layer.

Records are `type u8 || version u16 || length u16 || fragment`.  Before
ChangeCipherSpec, fragments travel in the clear; afterwards each
direction runs MAC-then-encrypt CBC through primitives.seal_record with
its own sequence counter starting at 0.  A record whose protection fails
is fatal: the error propagates and the connection must be torn down.
"""

from __future__ import annotations

import struct

from ..errors import (
    BadMac,
    BadPadding,
    ConnectionClosed,
    MalformedEncoding,
    RecordOverflow,
)
from ..primitives import MAX_RECORD_PLAINTEXT, SymmetricKeys, open_record, seal_record
from .transport import Transport
from .wire import TLS_VERSION, ContentType

_HEADER = struct.Struct(">BHH")
# CBC expansion: 16 IV + up to 64 MAC + up to 16 padding + block rounding.
_MAX_WIRE_FRAGMENT = MAX_RECORD_PLAINTEXT + 2048


class RecordLayer:
    def __init__(self, transport: Transport):
        self.transport = transport
        self._send_keys: SymmetricKeys | None = None
        self._recv_keys: SymmetricKeys | None = None
        self._send_seq = 0
        self._recv_seq = 0
        self.bytes_sent = 0
        self.bytes_received = 0

    def enable_send_protection(self, keys: SymmetricKeys) -> None:
        self._send_keys = keys
        self._send_seq = 0

    def enable_recv_protection(self, keys: SymmetricKeys) -> None:
        self._recv_keys = keys
        self._recv_seq = 0

    def send(self, content_type: ContentType, payload: bytes) -> None:
        if len(payload) > MAX_RECORD_PLAINTEXT:
            raise RecordOverflow(
                f"record payload {len(payload)} exceeds {MAX_RECORD_PLAINTEXT}"
            )
        if self._send_keys is not None:
            header = struct.pack(">BH", content_type, TLS_VERSION)
            fragment = seal_record(self._send_keys, self._send_seq, header, payload)
            self._send_seq += 1
        else:
            fragment = payload
        wire = _HEADER.pack(content_type, TLS_VERSION, len(fragment)) + fragment
        self.transport.write(wire)
        self.bytes_sent += len(wire)

    def recv(self) -> tuple[ContentType, bytes]:
        header = self.transport.read_exact(_HEADER.size)
        ctype_raw, version, length = _HEADER.unpack(header)
        if self._recv_keys is not None:
            return self._recv_protected(header, ctype_raw, version, length)
        try:
            content_type = ContentType(ctype_raw)
        except ValueError:
            raise MalformedEncoding(f"unknown content type {ctype_raw}", offset=0) from None
        if version != TLS_VERSION:
            raise MalformedEncoding(f"unsupported record version 0x{version:04x}", offset=1)
        if length > _MAX_WIRE_FRAGMENT:
            raise MalformedEncoding(f"record length {length} exceeds limit", offset=3)
        fragment = self.transport.read_exact(length)
        self.bytes_received += _HEADER.size + length
        return content_type, fragment

    def _recv_protected(
        self, header: bytes, ctype_raw: int, version: int, length: int
    ) -> tuple[ContentType, bytes]:
        """Receive one sealed record.

        The type and version bytes are authenticated, so their validation
        is deferred to the MAC: the raw header bytes feed open_record and
        any deviation surfaces as BadMac rather than through a parser
        path.  Framing damage gets the sealed-record error model too: a
        length no sealed record can have is BadPadding, and a fragment
        the peer never finishes delivering fails authentication, exactly
        as a truncated ciphertext would.
        """
        if length > _MAX_WIRE_FRAGMENT:
            raise BadPadding(
                f"claimed fragment length {length} cannot hold a sealed record"
            )
        try:
            fragment = self.transport.read_exact(length)
        except ConnectionClosed as exc:
            raise BadMac(f"protected record truncated: {exc}") from exc
        self.bytes_received += _HEADER.size + length
        payload = open_record(self._recv_keys, self._recv_seq, header[:3], fragment)
        self._recv_seq += 1
        try:
            content_type = ContentType(ctype_raw)
        except ValueError:
            raise MalformedEncoding(f"unknown content type {ctype_raw}", offset=0) from None
        if version != TLS_VERSION:
            raise MalformedEncoding(f"unsupported record version 0x{version:04x}", offset=1)
        return content_type, payload
