"""Shared test plumbing.

The acceptance tests register one outcome per shipped claim; the hook
below prints them as a block at the end of the run so the pass/fail
status of every claim is visible in one place.
"""

ACCEPTANCE_RESULTS = []


def record_criterion(number, name, ok, detail=""):
    ACCEPTANCE_RESULTS.append((number, name, "PASS" if ok else "FAIL", detail))


def record_criterion_skip(number, name, reason):
    ACCEPTANCE_RESULTS.append((number, name, "SKIP", reason))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, status, detail in sorted(ACCEPTANCE_RESULTS):
        line = f"[{status}] criterion {number}: {name}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
