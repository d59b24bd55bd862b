"""Scaled-leader teleoperation without the hardware bill.

A low-cost leader arm is a kinematically equivalent, length-scaled copy
of the follower robot: move the small arm and the big one mirrors it
joint for joint. This package provides everything around that idea that
is software: the scaled kinematic models, the leader's static balance
analysis, the servo bus and a virtual stand-in for it, the joint-space
control pipeline with safety monitoring, a first-order follower
simulator, a binary pub/sub wire protocol with a browser JSON bridge,
and demonstration recording with validated, bit-exact replay.

The high-traffic names are re-exported here; each module carries the
full set for its area.
"""

from .errors import (
    AnalysisError,
    BusError,
    CalibrationError,
    ConfigError,
    ContractViolation,
    DomainError,
    EncodeError,
    MinileadError,
    ModelFileError,
    SchemaError,
    SessionFileError,
    StaleReadError,
    UnsupportedModelError,
)
from .follower_sim import ServoDynamics, SimState, initial_sim_state, sim_step
from .kinematics import (
    Pose,
    RobotModel,
    forward_kinematics,
    jacobian,
    load_builtin_model,
    load_robot_model,
    manipulability,
    scale_model,
)
from .recorder import Record, SessionMeta, load_session, replay, validate, write_session
from .statics import (
    LinkInertia,
    SpringRegularizer,
    default_leader_setup,
    force_height_profile,
    gravity_torque,
    holding_force,
)
from .teleop import (
    Phase,
    SafetyStatus,
    TeleopConfig,
    TeleopState,
    initial_state,
    reset_fault,
    safety_check,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "MinileadError",
    "ContractViolation",
    "DomainError",
    "UnsupportedModelError",
    "ModelFileError",
    "CalibrationError",
    "BusError",
    "StaleReadError",
    "EncodeError",
    "SchemaError",
    "AnalysisError",
    "ConfigError",
    "SessionFileError",
    "RobotModel",
    "Pose",
    "forward_kinematics",
    "jacobian",
    "manipulability",
    "scale_model",
    "load_robot_model",
    "load_builtin_model",
    "LinkInertia",
    "SpringRegularizer",
    "gravity_torque",
    "holding_force",
    "force_height_profile",
    "default_leader_setup",
    "TeleopConfig",
    "TeleopState",
    "SafetyStatus",
    "Phase",
    "initial_state",
    "step",
    "reset_fault",
    "safety_check",
    "ServoDynamics",
    "SimState",
    "initial_sim_state",
    "sim_step",
    "SessionMeta",
    "Record",
    "write_session",
    "validate",
    "load_session",
    "replay",
]
