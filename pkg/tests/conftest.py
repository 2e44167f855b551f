import pytest

_LINES: list[tuple[int, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, name): acceptance criterion reported in the terminal summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    n, name = mark.args
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    status = "PASS" if report.passed else "FAIL"
    _LINES.append((n, f"criterion {n:2d} {status}  {name}  ({report.duration:.1f}s){'  ' + detail if detail else ''}"))


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
