"""Wire-level constants and codecs for the TLS-1.2-subset stack.

Framing follows TLS 1.2 conventions: big-endian integers, length-prefixed
vectors, 4-byte handshake headers (1-byte type, 3-byte length).  Decoders
are strict: trailing bytes and out-of-range values are rejected with the
failing byte offset.

The template-info extension (type 0xFD00, private-use range) carries the
sender's registry version, security level, and both resolved algorithm
identifiers, so a peer can classify template drift before any key
exchange happens.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

from ..errors import AgilecryptError, MalformedEncoding

TLS_VERSION = 0x0303
SUITE_0x1306 = 0x1306
SUITE_NAMES = {SUITE_0x1306: "TLS_CME_SPX_WITH_AES_256_CBC_SHA512"}
TEMPLATE_INFO_EXT = 0xFD00

MAX_HANDSHAKE_MESSAGE = 8 * 1024 * 1024  # generous cap above the largest certificate


class ContentType(IntEnum):
    CHANGE_CIPHER_SPEC = 20
    ALERT = 21
    HANDSHAKE = 22
    APPLICATION_DATA = 23


class HandshakeType(IntEnum):
    CLIENT_HELLO = 1
    SERVER_HELLO = 2
    CERTIFICATE = 11
    SERVER_HELLO_DONE = 14
    CLIENT_KEY_EXCHANGE = 16
    FINISHED = 20


class AlertDescription(IntEnum):
    BAD_RECORD_MAC = 20
    HANDSHAKE_FAILURE = 40
    BAD_CERTIFICATE = 42
    DECRYPT_ERROR = 51
    TEMPLATE_MISMATCH = 112
    INVALID_CIPHERTEXT = 113


class TlsError(AgilecryptError):
    """Base class for protocol-level failures."""


class TlsAlertSent(TlsError):
    """This side detected a fatal condition and sent the alert."""

    def __init__(self, description: AlertDescription, reason: str):
        super().__init__(f"sent fatal alert {description.name}: {reason}")
        self.description = description
        self.reason = reason


class TlsAlertReceived(TlsError):
    """The peer sent a fatal alert."""

    def __init__(self, description: int):
        try:
            name = AlertDescription(description).name
        except ValueError:
            name = f"code {description}"
        super().__init__(f"received fatal alert {name}")
        self.description = description


# ---------------------------------------------------------------------------
# Strict reader / vector helpers
# ---------------------------------------------------------------------------

class Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._off = 0

    @property
    def offset(self) -> int:
        return self._off

    def take(self, n: int) -> bytes:
        if self._off + n > len(self._data):
            raise MalformedEncoding("input truncated", offset=self._off)
        chunk = self._data[self._off : self._off + n]
        self._off += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u24(self) -> int:
        high, low = struct.unpack(">BH", self.take(3))
        return (high << 16) | low

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def vec8(self) -> bytes:
        return self.take(self.u8())

    def vec16(self) -> bytes:
        return self.take(self.u16())

    def vec24(self) -> bytes:
        return self.take(self.u24())

    def vec32(self) -> bytes:
        return self.take(self.u32())

    def expect_end(self) -> None:
        if self._off != len(self._data):
            raise MalformedEncoding(
                f"{len(self._data) - self._off} trailing bytes", offset=self._off
            )


def _vec8(data: bytes) -> bytes:
    if len(data) > 0xFF:
        raise MalformedEncoding(f"vector of {len(data)} bytes exceeds u8 length")
    return struct.pack(">B", len(data)) + data


def _vec16(data: bytes) -> bytes:
    if len(data) > 0xFFFF:
        raise MalformedEncoding(f"vector of {len(data)} bytes exceeds u16 length")
    return struct.pack(">H", len(data)) + data


def _vec24(data: bytes) -> bytes:
    if len(data) > 0xFFFFFF:
        raise MalformedEncoding(f"vector of {len(data)} bytes exceeds u24 length")
    return struct.pack(">BH", len(data) >> 16, len(data) & 0xFFFF) + data


def _vec32(data: bytes) -> bytes:
    if len(data) > 0xFFFFFFFF:
        raise MalformedEncoding(f"vector of {len(data)} bytes exceeds u32 length")
    return struct.pack(">I", len(data)) + data


# ---------------------------------------------------------------------------
# Handshake message framing
# ---------------------------------------------------------------------------

def encode_handshake_message(hs_type: HandshakeType, body: bytes) -> bytes:
    if len(body) > 0xFFFFFF:
        raise MalformedEncoding(f"handshake body of {len(body)} bytes exceeds u24 length")
    return struct.pack(">BBH", hs_type, len(body) >> 16, len(body) & 0xFFFF) + body


def decode_handshake_header(header: bytes) -> tuple[HandshakeType, int]:
    if len(header) != 4:
        raise MalformedEncoding("handshake header must be 4 bytes", offset=len(header))
    try:
        hs_type = HandshakeType(header[0])
    except ValueError:
        raise MalformedEncoding(f"unknown handshake type {header[0]}", offset=0) from None
    length = (header[1] << 16) | (header[2] << 8) | header[3]
    return hs_type, length


# ---------------------------------------------------------------------------
# Template-info extension
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemplateInfo:
    registry_version: int
    level: int
    sig_id: str
    enc_id: str

    def encode(self) -> bytes:
        return (
            struct.pack(">IB", self.registry_version, self.level)
            + _vec8(self.sig_id.encode("ascii"))
            + _vec8(self.enc_id.encode("ascii"))
        )

    @classmethod
    def decode(cls, data: bytes) -> TemplateInfo:
        r = Reader(data)
        version = r.u32()
        level = r.u8()
        try:
            sig_id = r.vec8().decode("ascii")
            enc_id = r.vec8().decode("ascii")
        except UnicodeDecodeError as exc:
            raise MalformedEncoding("algorithm id is not ASCII", offset=r.offset) from exc
        r.expect_end()
        return cls(registry_version=version, level=level, sig_id=sig_id, enc_id=enc_id)


def _encode_extensions(info: TemplateInfo) -> bytes:
    ext = struct.pack(">H", TEMPLATE_INFO_EXT) + _vec16(info.encode())
    return _vec16(ext)


def _decode_extensions(r: Reader) -> TemplateInfo | None:
    if r.offset == len(r._data):  # extensions block is optional in TLS 1.2
        return None
    block = Reader(r.vec16())
    info = None
    while block.offset < len(block._data):
        ext_type = block.u16()
        ext_data = block.vec16()
        if ext_type == TEMPLATE_INFO_EXT:
            if info is not None:
                raise MalformedEncoding("duplicate template-info extension")
            info = TemplateInfo.decode(ext_data)
    return info


# ---------------------------------------------------------------------------
# Hello messages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClientHello:
    random: bytes
    cipher_suites: tuple[int, ...]
    template_info: TemplateInfo | None
    session_id: bytes = b""
    compression_methods: tuple[int, ...] = (0,)

    def encode(self) -> bytes:
        suites = b"".join(struct.pack(">H", s) for s in self.cipher_suites)
        body = (
            struct.pack(">H", TLS_VERSION)
            + self.random
            + _vec8(self.session_id)
            + _vec16(suites)
            + _vec8(bytes(self.compression_methods))
        )
        if self.template_info is not None:
            body += _encode_extensions(self.template_info)
        return body

    @classmethod
    def decode(cls, data: bytes) -> ClientHello:
        r = Reader(data)
        version = r.u16()
        if version != TLS_VERSION:
            raise MalformedEncoding(f"unsupported version 0x{version:04x}", offset=0)
        random = r.take(32)
        session_id = r.vec8()
        suites_raw = r.vec16()
        if len(suites_raw) == 0 or len(suites_raw) % 2:
            raise MalformedEncoding("cipher suite list invalid", offset=r.offset)
        suites = tuple(
            struct.unpack(">H", suites_raw[i : i + 2])[0] for i in range(0, len(suites_raw), 2)
        )
        compression = tuple(r.vec8())
        info = _decode_extensions(r)
        r.expect_end()
        return cls(
            random=random,
            cipher_suites=suites,
            template_info=info,
            session_id=session_id,
            compression_methods=compression,
        )


@dataclass(frozen=True)
class ServerHello:
    random: bytes
    cipher_suite: int
    template_info: TemplateInfo | None
    session_id: bytes = b""

    def encode(self) -> bytes:
        body = (
            struct.pack(">H", TLS_VERSION)
            + self.random
            + _vec8(self.session_id)
            + struct.pack(">HB", self.cipher_suite, 0)
        )
        if self.template_info is not None:
            body += _encode_extensions(self.template_info)
        return body

    @classmethod
    def decode(cls, data: bytes) -> ServerHello:
        r = Reader(data)
        version = r.u16()
        if version != TLS_VERSION:
            raise MalformedEncoding(f"unsupported version 0x{version:04x}", offset=0)
        random = r.take(32)
        session_id = r.vec8()
        suite = r.u16()
        compression = r.u8()
        if compression != 0:
            raise MalformedEncoding("compression must be null", offset=r.offset - 1)
        info = _decode_extensions(r)
        r.expect_end()
        return cls(random=random, cipher_suite=suite, template_info=info, session_id=session_id)


# ---------------------------------------------------------------------------
# Remaining handshake bodies
# ---------------------------------------------------------------------------

def encode_certificate_body(cert_bytes: bytes) -> bytes:
    return _vec24(_vec24(cert_bytes))


def decode_certificate_body(data: bytes) -> bytes:
    r = Reader(data)
    chain = Reader(r.vec24())
    r.expect_end()
    cert = chain.vec24()
    chain.expect_end()
    return cert


def encode_client_key_exchange_body(ct_bytes: bytes) -> bytes:
    return _vec16(ct_bytes)


def decode_client_key_exchange_body(data: bytes) -> bytes:
    r = Reader(data)
    ct = r.vec16()
    if len(ct) == 0:
        raise MalformedEncoding("empty key exchange payload", offset=0)
    r.expect_end()
    return ct


def encode_finished_body(verify_data: bytes) -> bytes:
    if len(verify_data) != 12:
        raise MalformedEncoding("verify_data must be 12 bytes")
    return verify_data


def decode_finished_body(data: bytes) -> bytes:
    if len(data) != 12:
        raise MalformedEncoding(f"finished body is {len(data)} bytes, expected 12")
    return data


def decode_server_hello_done_body(data: bytes) -> None:
    if data != b"":
        raise MalformedEncoding("ServerHelloDone carries no body", offset=0)


def encode_alert(description: AlertDescription) -> bytes:
    return bytes([2, description])  # level 2 = fatal; the subset knows no warnings


def decode_alert(data: bytes) -> int:
    if len(data) != 2:
        raise MalformedEncoding(f"alert record is {len(data)} bytes, expected 2")
    if data[0] != 2:
        raise MalformedEncoding(f"alert level {data[0]} unknown, only fatal exists here")
    return data[1]
