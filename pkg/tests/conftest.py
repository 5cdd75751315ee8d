"""Collects acceptance-criterion outcomes and prints one line per criterion at the end of the run."""
import pytest

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")
    config.stash[_RESULTS] = []


@pytest.fixture
def outcome(request):
    """Dict a criterion test fills with a one-line ``detail`` summary of what it measured."""
    d = {"detail": ""}
    request.node.acceptance_outcome = d
    return d


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    result = yield
    rep = result.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    detail = getattr(item, "acceptance_outcome", {}).get("detail", "")
    item.config.stash[_RESULTS].append((mark.args[0], mark.args[1], rep.passed, detail))


def pytest_terminal_summary(terminalreporter, config):
    rows = sorted(config.stash.get(_RESULTS, []))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in rows:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number} {status}: {title}: {detail}")
