import sys
import warnings
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from colddamp.errors import FastCavityWarning  # noqa: E402

ACCEPTANCE_RESULTS = {}


@pytest.fixture(autouse=True)
def _quiet_fast_cavity():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FastCavityWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
