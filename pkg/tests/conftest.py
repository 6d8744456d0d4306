import re

import pytest

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion.

    The test calls ``criterion(ok, detail)``; a test that errors before
    recording is reported as a failure.
    """
    n = int(re.match(r"test_criterion_(\d+)", request.node.name).group(1))
    state = {}

    def record(ok: bool, detail: str):
        state["v"] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}: {detail}")

    yield record
    _CRITERIA[n] = state.get("v", (False, "did not complete"))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}: {detail}")
