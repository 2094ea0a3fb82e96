"""Prints one pass/fail line per acceptance criterion after the run."""

_CRITERIA = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    _CRITERIA.append((number, title, bool(ok), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_CRITERIA):
        word = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {word} {title}: {detail}")
