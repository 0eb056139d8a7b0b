import numpy as np
import pytest

CRITERIA: dict[int, dict] = {}
NODE_CRITERION: dict[str, int] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_collection_finish(session):
    # after deselection, so -m / -k filters do not list criteria that never ran
    for item in session.items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            num, title = m.args
            CRITERIA.setdefault(num, {"title": title, "outcomes": [], "notes": []})
            NODE_CRITERION[item.nodeid] = num


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    num = NODE_CRITERION.get(report.nodeid)
    if num is not None:
        CRITERIA[num]["outcomes"].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        entry = CRITERIA[num]
        outs = entry["outcomes"]
        if not outs:
            verdict = "NOT RUN"
        elif all(o == "passed" for o in outs):
            verdict = "PASS"
        elif any(o == "failed" for o in outs):
            verdict = "FAIL"
        else:
            verdict = "SKIPPED"
        terminalreporter.write_line(f"criterion {num}: {verdict:7s} {entry['title']}")
        for note in entry["notes"]:
            terminalreporter.write_line(f"    {note}")


@pytest.fixture
def criterion_note(request):
    """Attach a line of measured values to the test's criterion summary."""
    num = NODE_CRITERION.get(request.node.nodeid)
    return (lambda text: CRITERIA[num]["notes"].append(text)) if num is not None else (lambda text: None)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
