import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


def frac_array(x):
    """Nested lists of 'p/q' strings to a float array."""
    if isinstance(x, str):
        return float(Fraction(x))
    return np.array([frac_array(v) for v in x])


@pytest.fixture(scope="session")
def reference():
    return json.loads((FIXTURES / "reference_values.json").read_text())


ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def report():
    """Record one acceptance line: ``report(name, passed, detail)``."""

    def _record(name: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE.append((name, bool(passed), detail))
        print(f"{name} {'PASS' if passed else 'FAIL'}: {detail}")
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{name} {'PASS' if passed else 'FAIL'}: {detail}")
