import numpy as np
import pytest

from dualfield.scene import CameraPose


def pytest_terminal_summary(terminalreporter):
    # One pass/fail line per acceptance criterion, visible in any capture mode.
    try:
        from test_acceptance import CRITERION_LINES
    except ImportError:
        return
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def identity_pose():
    # 101x101 sensor with the principal point on the center pixel's center.
    return CameraPose(rotation=np.eye(3), translation=np.zeros(3),
                      fx=100.0, fy=100.0, cx=50.5, cy=50.5, width=101, height=101)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
