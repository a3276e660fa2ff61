"""Acceptance reporting: one PASS/FAIL line per ``@pytest.mark.criterion`` test."""
import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    failed = rep.failed or (rep.when == "setup" and rep.skipped)
    if rep.when == "call" or failed:
        prev = _RESULTS.get(n)
        ok = not failed and (prev is None or prev[0])
        if prev is not None and prev[2]:
            detail = f"{prev[2]}; {detail}" if detail else prev[2]
        _RESULTS[n] = (ok, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, title, detail = _RESULTS[n]
        line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
