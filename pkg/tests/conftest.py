import re
import time

_acceptance_results = {}
_session_start = time.time()


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    outcome = "PASS" if report.passed else "FAIL"
    _acceptance_results[num] = (outcome, report.nodeid.split("::")[-1])


def pytest_terminal_summary(terminalreporter):
    if _acceptance_results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for num in sorted(_acceptance_results):
            outcome, name = _acceptance_results[num]
            terminalreporter.write_line(f"{outcome} criterion {num:2d}: {name}")
    elapsed = time.time() - _session_start
    terminalreporter.write_line(f"suite wall time: {elapsed:.1f} s")
