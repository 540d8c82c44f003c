import numpy as np
import pytest

from igabem.bem import assemble_operators
from igabem.derham import build_surface_complex, build_volume_complex
from igabem.geometry import build_box, build_unit_ball


@pytest.fixture(scope="session")
def ball():
    return build_unit_ball()


@pytest.fixture(scope="session")
def box():
    return build_box()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ball_surface():
    """Surface complexes of the ball keyed by (degree, level)."""
    _, boundary = build_unit_ball()
    cache = {}

    def get(p, lv):
        if (p, lv) not in cache:
            cache[(p, lv)] = build_surface_complex(boundary, p, lv)
        return cache[(p, lv)]

    return get


@pytest.fixture(scope="session")
def ball_volume():
    volume, _ = build_unit_ball()
    cache = {}

    def get(p, lv):
        if (p, lv) not in cache:
            cache[(p, lv)] = build_volume_complex(volume, p, lv)
        return cache[(p, lv)]

    return get


@pytest.fixture(scope="session")
def ball_ops(ball_surface):
    """Boundary operators with the density-space V0, keyed by (degree, level)."""
    cache = {}

    def get(p, lv):
        if (p, lv) not in cache:
            cache[(p, lv)] = assemble_operators(ball_surface(p, lv), lv, scalar="density")
        return cache[(p, lv)]

    return get


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Recorder ``record(number, passed, detail)`` for the acceptance summary."""
    table = request.config.stash[ACCEPTANCE]
    seen = []

    def record(number, passed, detail):
        seen.append(number)
        table[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)

    yield record
    if not seen:
        number = request.node.get_closest_marker("criterion").args[0]
        table[number] = (False, "raised before the check completed")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(ACCEPTANCE, {})
    if not table:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(table):
        passed, detail = table[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
