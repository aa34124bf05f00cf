from __future__ import annotations

import acceptance_report


def pytest_terminal_summary(terminalreporter) -> None:
    if not acceptance_report.LINES:
        return
    terminalreporter.section("acceptance checks")
    for line in acceptance_report.LINES:
        terminalreporter.write_line(line)
