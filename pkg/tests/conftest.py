"""Collects acceptance outcomes and prints one verdict line per criterion."""
import pytest

ACCEPTANCE = {
    1: "null-model exactness",
    2: "distribution correctness",
    3: "validation ordering",
    4: "planted-structure recovery",
    5: "FDR correctness",
    6: "mesoscale oracles",
    7: "k-shell/core consistency",
    8: "metric oracles",
    9: "pipeline determinism",
    10: "ingest fidelity",
}

_outcomes: dict[int, list[bool]] = {}
_notes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(mark.args[0], []).append(rep.passed)


@pytest.fixture
def note(request):
    """Attach a measurement to the summary line of the test's criterion."""
    n = request.node.get_closest_marker("criterion").args[0]
    return lambda text: _notes.setdefault(n, []).append(text)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in ACCEPTANCE.items():
        runs = _outcomes.get(n)
        verdict = "NOT RUN" if not runs else "PASS" if all(runs) else "FAIL"
        detail = "; ".join(_notes.get(n, []))
        terminalreporter.write_line(f"criterion {n} ({title}): {verdict}" + (f"  [{detail}]" if detail else ""))
