"""Handshake transcript bookkeeping and the measurement report.

Every handshake message is logged with its direction and exact wire size
(including the 4-byte handshake header).  ChangeCipherSpec is logged for
the size report but excluded from the transcript hash, matching how the
Finished computation treats it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from ..primitives import HashId, hash_data
from .wire import SUITE_NAMES, AlertDescription, TemplateInfo


@dataclass
class TranscriptEntry:
    message: str
    direction: str  # "sent" or "received"
    length: int


@dataclass
class HandshakeTranscript:
    entries: list[TranscriptEntry] = field(default_factory=list)
    local_template: TemplateInfo | None = None
    remote_template: TemplateInfo | None = None
    suite: int | None = None
    aborted: bool = False
    alert: int | None = None
    duration_ms: float | None = None
    _parts: list[bytes] = field(default_factory=list, repr=False)
    _started: float = field(default_factory=time.monotonic, repr=False)

    def add_message(self, name: str, direction: str, data: bytes) -> None:
        self.entries.append(TranscriptEntry(message=name, direction=direction, length=len(data)))
        self._parts.append(data)

    def note_ccs(self, direction: str) -> None:
        # One-byte body, never part of the transcript hash.
        self.entries.append(TranscriptEntry(message="ChangeCipherSpec", direction=direction, length=1))

    def transcript_hash(self) -> bytes:
        return hash_data(HashId.H512, b"".join(self._parts))

    def finish(self, suite: int | None = None, aborted: bool = False, alert: int | None = None) -> None:
        if self.duration_ms is not None:
            return
        if suite is not None:
            self.suite = suite
        self.aborted = aborted
        self.alert = alert
        self.duration_ms = (time.monotonic() - self._started) * 1000.0


def _template_dict(info: TemplateInfo | None) -> dict | None:
    if info is None:
        return None
    return {
        "registry_version": info.registry_version,
        "level": info.level,
        "sig_id": info.sig_id,
        "enc_id": info.enc_id,
    }


def transcript_report(t: HandshakeTranscript) -> dict:
    """JSON-ready summary: per-message sizes, totals, negotiated suite,
    template views from both sides, duration, and abort status."""
    sent = sum(e.length for e in t.entries if e.direction == "sent")
    received = sum(e.length for e in t.entries if e.direction == "received")
    alert_name = None
    if t.alert is not None:
        try:
            alert_name = AlertDescription(t.alert).name.lower()
        except ValueError:
            alert_name = None
    return {
        "messages": [
            {"message": e.message, "direction": e.direction, "bytes": e.length}
            for e in t.entries
        ],
        "total_bytes": sent + received,
        "total_sent": sent,
        "total_received": received,
        "suite": None if t.suite is None else f"0x{t.suite:04X}",
        "suite_name": None if t.suite is None else SUITE_NAMES.get(t.suite),
        "templates": {
            "local": _template_dict(t.local_template),
            "remote": _template_dict(t.remote_template),
        },
        "duration_ms": t.duration_ms,
        "aborted": t.aborted,
        "alert": t.alert,
        "alert_name": alert_name,
    }
