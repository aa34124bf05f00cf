"""A purpose-built TLS-1.2-style stack for exercising the post-quantum
stand-ins end to end.

Exactly one cipher suite exists (0x1306: KEM key exchange, AES-256-CBC,
HMAC-SHA512 records) plus a hello extension carrying each side's
security-level template so that registry drift aborts the handshake
early.  The interesting artifact is the handshake size report: the
server certificate embeds the full KEM public key, so Certificate is a
multi-megabyte message at the largest parameter set.
"""

from __future__ import annotations

from .certificate import (
    Certificate,
    encode_certificate,
    issue_certificate,
    parse_certificate,
    verify_certificate,
)
from .handshake import (
    ClientTlsConfig,
    HandshakeChannel,
    ServerTlsConfig,
    SessionKeys,
    TlsSession,
    build_template_info,
    client_handshake,
    derive_session_keys,
    finished_verify_data,
    server_handshake,
    template_divergence,
)
from .record import RecordLayer
from .transcript import HandshakeTranscript, TranscriptEntry, transcript_report
from .transport import (
    BufferTransport,
    SocketTransport,
    Transport,
    connect_tcp,
    transport_pair,
)
from .wire import (
    MAX_HANDSHAKE_MESSAGE,
    SUITE_0x1306,
    SUITE_NAMES,
    TEMPLATE_INFO_EXT,
    TLS_VERSION,
    AlertDescription,
    ClientHello,
    ContentType,
    HandshakeType,
    ServerHello,
    TemplateInfo,
    TlsAlertReceived,
    TlsAlertSent,
    TlsError,
)

__all__ = [
    "AlertDescription",
    "BufferTransport",
    "Certificate",
    "ClientHello",
    "ClientTlsConfig",
    "ContentType",
    "HandshakeChannel",
    "HandshakeTranscript",
    "HandshakeType",
    "MAX_HANDSHAKE_MESSAGE",
    "RecordLayer",
    "SUITE_0x1306",
    "SUITE_NAMES",
    "ServerHello",
    "ServerTlsConfig",
    "SessionKeys",
    "SocketTransport",
    "TEMPLATE_INFO_EXT",
    "TLS_VERSION",
    "TemplateInfo",
    "TlsAlertReceived",
    "TlsAlertSent",
    "TlsError",
    "TlsSession",
    "TranscriptEntry",
    "Transport",
    "build_template_info",
    "client_handshake",
    "connect_tcp",
    "derive_session_keys",
    "encode_certificate",
    "finished_verify_data",
    "issue_certificate",
    "parse_certificate",
    "server_handshake",
    "template_divergence",
    "transcript_report",
    "transport_pair",
    "verify_certificate",
]
