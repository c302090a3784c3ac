"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

from collections import defaultdict

import pytest

CRITERIA = {
    1: "secant equation after random BFGS updates",
    2: "Wolfe conditions re-verified on every accepted step",
    3: "step-length lower bound on a generated instance",
    4: "eigenvalue gap and vanishing memory (n=10, m=6, 120 digits)",
    5: "bounded eigenvalues and full exploration near the minimizer",
    6: "restarts every m iterations versus every m-1",
    7: "criticality test and min-norm hull oracle",
    8: "smooth quadratic and absolute value regression",
}

_outcomes = defaultdict(dict)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, part=''): acceptance criterion a test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number = mark.args[0]
    part = mark.args[1] if len(mark.args) > 1 else ""
    parts = _outcomes[number]
    if report.failed:
        parts[part] = False
    elif report.when == "call" and report.passed:
        parts.setdefault(part, True)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        parts = _outcomes[number]
        ok = all(parts.values())
        detail = ""
        named = {p: v for p, v in parts.items() if p}
        if named:
            detail = " [" + ", ".join(f"{p}: {'pass' if v else 'FAIL'}" for p, v in sorted(named.items())) + "]"
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {CRITERIA[number]}{detail}")
