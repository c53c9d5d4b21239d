"""Acceptance bookkeeping: one pass/fail line per criterion in the terminal summary."""
import pytest

_results: dict[int, dict] = {}
_notes: list[str] = []


@pytest.fixture
def note():
    """Record a measurement line for the acceptance summary."""
    return _notes.append


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    mark = getattr(report, "criterion", None)
    if mark is None:
        return
    number, title = mark
    entry = _results.setdefault(number, {"title": title, "ok": True, "ran": False})
    if report.failed:
        entry["ok"] = False
    if report.when == "call":
        entry["ran"] = entry["ran"] or not report.skipped


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        status = "PASS" if entry["ok"] and entry["ran"] else ("SKIP" if entry["ok"] else "FAIL")
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {entry['title']}")
    for line in _notes:
        terminalreporter.write_line(f"  {line}")
