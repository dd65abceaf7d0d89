"""Shared test plumbing: the acceptance suite records one line per
criterion and this hook prints them after the run, where pytest's
per-test output capture cannot swallow them."""

_criterion_lines = []


def record_criterion(line: str) -> None:
    _criterion_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.write_line(line)
