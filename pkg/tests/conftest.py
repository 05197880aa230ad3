"""Suite-wide fixtures, hypothesis settings, and the criterion report.

Acceptance tests register one line per criterion through
`record_criterion`; the terminal summary prints them all at the end of the
run so the verdicts survive output capturing.
"""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("suite")

_CRITERION_LINES: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    _CRITERION_LINES[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERION_LINES):
        passed, detail = _CRITERION_LINES[num]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {verdict} ({detail})")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=np.array([7, 7], dtype=np.uint64)))
