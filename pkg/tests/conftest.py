import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            n, title = mark.args
            _CRITERIA.setdefault(n, {"title": title, "outcomes": [], "notes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark and (rep.when == "call" or (rep.when == "setup" and rep.failed)):
        entry = _CRITERIA[mark.args[0]]
        entry["outcomes"].append(rep.passed)
        note = getattr(item, "_criterion_note", None)
        if note:
            entry["notes"].append(note)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        if not entry["outcomes"]:
            status = "NOT RUN"
        else:
            status = "PASS" if all(entry["outcomes"]) else "FAIL"
        notes = "; ".join(entry["notes"])
        tr.write_line(f"criterion {n:2d} {status:7s} {entry['title']}" + (f" ({notes})" if notes else ""))


@pytest.fixture
def note(request):
    """Attach a short measurement summary to the criterion line."""

    def add(text: str):
        prev = getattr(request.node, "_criterion_note", None)
        request.node._criterion_note = f"{prev}; {text}" if prev else text

    return add
