import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fhsim.initial_state import default_initial_state
from fhsim.lattice import build_lattice

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def lat22():
    return build_lattice(2, 2)


@pytest.fixture(scope="session")
def lat23():
    return build_lattice(2, 3)


@pytest.fixture(scope="session")
def lat47():
    return build_lattice(4, 7)


def state_of(lat):
    return default_initial_state(lat)


def close_up_to_phase(a, b, tol=1e-9):
    k = np.argmax(np.abs(a))
    if abs(b[k]) < 1e-14:
        return False
    ph = a[k] / b[k]
    return abs(abs(ph) - 1) < tol and np.allclose(a, ph * b, atol=tol)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line, then assert."""
    def _verdict(n: int, ok: bool, detail: str):
        line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return _verdict


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
