import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion (set from the test's outcome)."""

    def record(number: int, title: str, detail: str = ""):
        ACCEPTANCE[number] = [title, detail, request.node.nodeid]

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        for entry in ACCEPTANCE.values():
            if entry[2] == item.nodeid and len(entry) == 3:
                entry.append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, detail, _, *passed = ACCEPTANCE[number]
        status = "PASS" if passed and passed[0] else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}" + (f"  ({detail})" if detail else ""))
