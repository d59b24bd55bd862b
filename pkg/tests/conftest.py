import numpy as np
import pytest

from minilead.kinematics import DHParameter, RobotModel, load_builtin_model

# One line per acceptance criterion, appended as the gate runs. Printed in
# the terminal summary so capture mode cannot swallow them.
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.ensure_newline()
        terminalreporter.section("acceptance criteria", sep="-")
        for line in acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def planar2() -> RobotModel:
    """Two unit links in the base x-y plane, both joints about z."""
    return RobotModel(
        name="planar2",
        dof=2,
        dh=(
            DHParameter(a=1.0, d=0.0, alpha_twist=0.0, theta_offset=0.0),
            DHParameter(a=1.0, d=0.0, alpha_twist=0.0, theta_offset=0.0),
        ),
        q_min=np.array([-np.pi, -np.pi]),
        q_max=np.array([np.pi, np.pi]),
        v_max=np.array([1.0, 1.0]),
    )


@pytest.fixture(scope="session")
def ur5() -> RobotModel:
    return load_builtin_model("ur5")


@pytest.fixture(scope="session")
def xarm7() -> RobotModel:
    return load_builtin_model("xarm7")


@pytest.fixture(scope="session")
def panda() -> RobotModel:
    return load_builtin_model("panda")
