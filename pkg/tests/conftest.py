import numpy as np
import pytest

from riscrb import oracles
from riscrb.scene import SceneConfig, build_scene


@pytest.fixture(scope="session")
def reference_scene():
    return build_scene(SceneConfig.reference())


@pytest.fixture
def small_scene():
    return build_scene(oracles.random_config(7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    """Store one acceptance line for the terminal summary."""
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
