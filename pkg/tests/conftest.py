"""Shared pytest plumbing: acceptance-criterion result reporting."""

_criterion_lines = []


def record_criterion(num: int, passed: bool, detail: str) -> None:
    line = f"[criterion {num:2d}] {'PASS' if passed else 'FAIL'} - {detail}"
    _criterion_lines.append((num, line))
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_criterion_lines):
            terminalreporter.write_line(line)
