"""Prints one PASS/FAIL line per acceptance criterion after the run."""

import re

_RESULTS = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    if report.when == "call" or report.failed or report.skipped:
        props = dict(report.user_properties)
        prev = _RESULTS.get(num)
        if prev is None or prev[0] == "PASS":
            _RESULTS[num] = ("PASS" if report.passed else "FAIL", props.get("title", ""), props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        status, title, detail = _RESULTS[num]
        line = f"criterion {num:2d} {status}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
