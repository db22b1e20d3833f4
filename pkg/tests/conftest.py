"""Per-criterion pass/fail summary for the acceptance suite.

Tests tagged ``@pytest.mark.criterion(n, "label")`` are grouped by ``n``; a
criterion passes only when every one of its tests passes. Measured numbers
attached with ``record_property("detail", ...)`` are echoed next to the
verdict.
"""

from collections import defaultdict

import pytest

_RESULTS = defaultdict(list)
_LABELS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, label): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        n, label = mark.args
        _LABELS[n] = label
        details = [v for k, v in item.user_properties if k == "detail"]
        _RESULTS[n].append((item.name, rep.passed and not hasattr(rep, "wasxfail"), details))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        runs = _RESULTS[n]
        ok = all(passed for _, passed, _ in runs)
        details = "; ".join(d for _, _, ds in runs for d in ds)
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {_LABELS[n]}"
        tr.write_line(f"{line} [{details}]" if details else line)
