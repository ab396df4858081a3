import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from quantvec import EmbeddingMatrix  # noqa: E402

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gaussian(rng):
    def make(n, d, ids=None):
        return EmbeddingMatrix(rng.standard_normal((n, d)).astype(np.float32), ids)

    return make


@pytest.fixture
def criterion(request):
    """Record one acceptance-criterion outcome for the terminal summary."""
    entry = {"name": request.node.name, "detail": ""}

    def record(detail: str) -> None:
        entry["detail"] = detail

    yield record
    rep = getattr(request.node, "rep_call", None)
    status = "PASS" if rep is not None and rep.passed else ("SKIP" if rep is not None and rep.skipped else "FAIL")
    _ACCEPTANCE.append((status, entry["name"], entry["detail"]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status:4}  {name}  {detail}")
