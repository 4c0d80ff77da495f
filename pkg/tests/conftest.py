"""Shared fixtures: acceptance-test verdict collection.

Acceptance tests record one [PASS]/[FAIL] line each through the `verdict`
fixture; the lines are echoed in a summary block at the end of the pytest
run so the outcome of every acceptance criterion is visible at a glance.
"""

import pytest

VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        VERDICTS.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if VERDICTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for _, line in sorted(VERDICTS):
            terminalreporter.write_line(line)
