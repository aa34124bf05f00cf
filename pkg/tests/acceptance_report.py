"""Shared registry for the end-to-end check verdict lines.

The acceptance tests record one line per check here; the conftest
terminal-summary hook prints them after the run, outside pytest's output
capture, so a plain ``pytest`` invocation always shows the verdicts.
"""

from __future__ import annotations

LINES: list[str] = []


def record(index: int, label: str, ok: bool, detail: str) -> bool:
    status = "PASS" if ok else "FAIL"
    line = f"[check {index}] {label}: {status} - {detail}"
    LINES.append(line)
    print(line, flush=True)
    return ok
