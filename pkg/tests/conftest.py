import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def sorted_percentile(values, p):
    """Independent linear-interpolation percentile on the sorted sample."""
    v = sorted(float(x) for x in np.ravel(values))
    idx = (len(v) - 1) * p / 100.0
    lo = int(idx // 1)
    hi = min(lo + 1, len(v) - 1)
    frac = idx - lo
    return v[lo] + (v[hi] - v[lo]) * frac


# Acceptance verdicts, printed as one line each at the end of the session.
ACCEPTANCE = {}


def record(criterion: str, passed, detail: str = "") -> bool:
    """Store a verdict for the summary; ``passed=None`` marks a skipped check."""
    ACCEPTANCE[criterion] = (passed, detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0].rstrip("abc")), k)):
        passed, detail = ACCEPTANCE[key]
        word = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"criterion {key}: {word}  {detail}")
