"""Shared pytest configuration.

Collects one PASS/FAIL line per acceptance criterion and prints them as a
summary block at the end of the run, so the acceptance verdicts are visible
without -s.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
