import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240601))


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion (printed at the end of the run)."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: t[0]):
            terminalreporter.write_line(line)
