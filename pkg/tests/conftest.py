"""Shared test plumbing: collects acceptance-criterion verdicts and prints
them in the terminal summary so they survive pytest's output capture."""

CRITERION_LINES = []


def record_criterion(number, passed, detail):
    line = f"[criterion {number:2d}] {'PASS' if passed else 'FAIL'}: {detail}"
    CRITERION_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES):
            terminalreporter.write_line(line)
