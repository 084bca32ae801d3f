import sys

_RESULTS: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """One PASS/FAIL line per acceptance criterion, shown live and in the summary."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    _RESULTS[criterion] = line
    sys.__stdout__.write("\n" + line + "\n")
    sys.__stdout__.flush()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[k])
