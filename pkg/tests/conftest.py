"""Collects one PASS/FAIL/SKIP line per acceptance criterion and prints them at session end."""
import pytest

ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    detail = getattr(item, "criterion_detail", "")
    if rep.when == "call":
        if rep.skipped:
            detail = str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else detail
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        ACCEPTANCE[name] = (status, detail)
    elif rep.when == "setup" and rep.skipped:
        ACCEPTANCE[name] = ("SKIP", str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else "")
    elif rep.failed:
        ACCEPTANCE[name] = ("FAIL", f"{rep.when} error")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion this test gates")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{status:4s}  {name}" + (f"  ({detail})" if detail else ""))
