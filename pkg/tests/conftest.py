import numpy as np
import pytest

from hmckit.hamiltonian import PhaseState

_ACCEPTANCE = {}


def explicit_euler(target, z: PhaseState, eps: float, n_steps: int) -> PhaseState:
    """Forward Euler with unit mass: both updates use the old state.

    Used only as a contrast for the leapfrog tests. On the standard normal one
    step is the matrix [[1, eps], [-eps, 1]], whose determinant 1 + eps^2 is
    not one.
    """
    x, p = z.position.copy(), z.momentum.copy()
    for _ in range(n_steps):
        x, p = x + eps * p, p + eps * target.grad_log_density(x)
    return PhaseState(x, p)


@pytest.fixture
def euler():
    return explicit_euler


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    passed = call.excinfo is None
    if not passed and not detail:
        detail = call.excinfo.exconly().splitlines()[0][:200]
    _ACCEPTANCE[number] = (title, passed, detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} [{status}] {title}: {detail}")
