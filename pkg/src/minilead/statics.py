"""Static analysis of a passive leader device under gravity.

A leader built from hobby servos is pulled toward the table by its own
weight; passive springs or rubber bands on selected joints bias it back
toward a natural posture. This module computes the joint torques produced
by gravity and by those regularizers, and the external force an operator
must apply at the handle (end-effector) to hold the device still.

All quantities are expressed in the leader base frame with gravity acting
along -z at 9.81 m/s^2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AnalysisError, ContractViolation, DomainError, ModelFileError
from .kinematics import RobotModel, forward_kinematics, jacobian

__all__ = [
    "GRAVITY",
    "LinkInertia",
    "SpringRegularizer",
    "HoldingForce",
    "ProfilePoint",
    "gravity_torque",
    "regularizer_torque",
    "holding_force",
    "force_height_profile",
    "rod_and_servo_inertias",
    "scale_masses",
    "default_leader_setup",
    "load_sweep",
    "builtin_sweep_path",
    "default_sweep_path",
]

GRAVITY = 9.81  # m/s^2, along -z of the base frame

_DATA_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class LinkInertia:
    """Point-mass summary of one link: total mass and center of mass.

    ``com`` is expressed in the link's own DH frame (the frame at its
    distal joint).
    """

    mass: float
    com: tuple[float, float, float]

    def __post_init__(self):
        if not (math.isfinite(self.mass) and self.mass >= 0):
            raise DomainError(f"link mass must be >= 0, got {self.mass}")
        object.__setattr__(self, "com", tuple(float(c) for c in self.com))


@dataclass(frozen=True)
class SpringRegularizer:
    """Torsional spring on one joint: torque = -stiffness * (q - rest_angle)."""

    joint_index: int
    stiffness: float
    rest_angle: float

    def __post_init__(self):
        if self.stiffness < 0:
            raise DomainError(f"spring stiffness must be >= 0, got {self.stiffness}")
        if self.joint_index < 0:
            raise DomainError(f"joint_index must be >= 0, got {self.joint_index}")


@dataclass(frozen=True)
class HoldingForce:
    """Minimum handle force holding the leader still, with leftover torque.

    ``residual_torque_nm`` is the norm of the joint torque that no handle
    force can balance; physically it is absorbed by servo friction.
    """

    force_n: float
    force_vector: tuple[float, float, float]
    residual_torque_nm: float


@dataclass(frozen=True)
class ProfilePoint:
    height_m: float
    force_n: float
    residual_torque_nm: float


def _check_inertias(model: RobotModel, inertias) -> list[LinkInertia]:
    inertias = list(inertias)
    if len(inertias) != model.dof:
        raise ContractViolation(
            f"need one LinkInertia per link: model {model.name} has {model.dof} links, "
            f"got {len(inertias)}"
        )
    return inertias


def gravity_torque(model: RobotModel, inertias, q) -> np.ndarray:
    """Joint torques exerted by gravity, -dU/dq with U the potential energy.

    Computed analytically from per-link center-of-mass Jacobians: only the
    z-rows matter because gravity is vertical.
    """
    inertias = _check_inertias(model, inertias)
    q = model.check_q(q)
    _, frames = forward_kinematics(model, q)

    tau = np.zeros(model.dof)
    z_axes = [np.array([0.0, 0.0, 1.0])] + [f[:3, 2] for f in frames[:-1]]
    origins = [np.zeros(3)] + [f[:3, 3] for f in frames[:-1]]
    for link, inertia in enumerate(inertias):
        if inertia.mass == 0.0:
            continue
        com_world = frames[link][:3, :3] @ np.asarray(inertia.com) + frames[link][:3, 3]
        weight = inertia.mass * GRAVITY
        for joint in range(link + 1):
            dz = np.cross(z_axes[joint], com_world - origins[joint])[2]
            tau[joint] -= weight * dz
    return tau


def regularizer_torque(springs, q) -> np.ndarray:
    """Total torque from all spring regularizers; zero on unsprung joints."""
    q = np.asarray(q, dtype=float)
    tau = np.zeros(q.shape[0])
    for spring in springs:
        if spring.joint_index >= q.shape[0]:
            raise ContractViolation(
                f"spring on joint {spring.joint_index} but joint vector has {q.shape[0]} entries"
            )
        tau[spring.joint_index] -= spring.stiffness * (q[spring.joint_index] - spring.rest_angle)
    return tau


def holding_force(model: RobotModel, inertias, springs, q) -> HoldingForce:
    """Force at the handle needed for static equilibrium.

    Solves J_p^T F = -(tau_gravity + tau_springs) in the least-squares
    sense with minimum-norm F, where J_p is the 3 x dof position Jacobian
    of the handle (end-effector) frame.
    """
    q = model.check_q(q)
    tau = gravity_torque(model, inertias, q) + regularizer_torque(springs, q)
    j_pos = jacobian(model, q)[:3]
    if np.max(np.abs(j_pos)) == 0.0:
        raise AnalysisError(f"model {model.name}: handle position Jacobian is identically zero")
    force, *_ = np.linalg.lstsq(j_pos.T, -tau, rcond=None)
    residual = float(np.linalg.norm(j_pos.T @ force + tau))
    return HoldingForce(
        force_n=float(np.linalg.norm(force)),
        force_vector=tuple(force),
        residual_torque_nm=residual,
    )


def force_height_profile(model: RobotModel, inertias, springs, q_path) -> list[ProfilePoint]:
    """Holding force along a path of configurations of increasing handle height."""
    q_path = [model.check_q(q) for q in q_path]
    if not q_path:
        raise ContractViolation("q_path must not be empty")
    heights = [float(forward_kinematics(model, q)[0].position[2]) for q in q_path]
    bad = [i for i in range(1, len(heights)) if heights[i] <= heights[i - 1]]
    if bad:
        raise ContractViolation(
            f"handle heights must be strictly increasing along the path; "
            f"offending indices: {bad}"
        )
    points = []
    for q, height in zip(q_path, heights):
        hf = holding_force(model, inertias, springs, q)
        points.append(ProfilePoint(height_m=height, force_n=hf.force_n,
                                   residual_torque_nm=hf.residual_torque_nm))
    return points


def rod_and_servo_inertias(model: RobotModel, rod_mass_per_m: float,
                           servo_mass: float) -> list[LinkInertia]:
    """Uniform-rod link masses plus a point mass per joint servo.

    Each link is a straight rod between consecutive DH frame origins
    (length sqrt(a^2 + d^2), independent of posture) with its servo sitting
    at the proximal joint.
    """
    inertias = []
    for row in model.dh:
        # proximal frame origin expressed in this link's frame
        ca, sa = math.cos(row.alpha_twist), math.sin(row.alpha_twist)
        proximal = np.array([-row.a, -row.d * sa, -row.d * ca])
        length = math.hypot(row.a, row.d)
        rod_mass = rod_mass_per_m * length
        total = rod_mass + servo_mass
        if total == 0.0:
            inertias.append(LinkInertia(mass=0.0, com=(0.0, 0.0, 0.0)))
            continue
        com = (rod_mass * (proximal / 2.0) + servo_mass * proximal) / total
        inertias.append(LinkInertia(mass=total, com=tuple(com)))
    return inertias


def scale_masses(inertias, factor: float) -> list[LinkInertia]:
    """Multiply every link mass by ``factor`` (statics are linear in mass)."""
    if not (math.isfinite(factor) and factor > 0):
        raise DomainError(f"mass scale factor must be positive, got {factor}")
    return [LinkInertia(mass=i.mass * factor, com=i.com) for i in inertias]


def load_sweep(path: str | Path) -> list[np.ndarray]:
    """Read a height-sweep file: JSON ``{"q_path": [[...], ...]}``."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict) or "q_path" not in raw:
        raise ModelFileError(f"{path}: sweep file must contain a q_path array")
    return [np.asarray(q, dtype=float) for q in raw["q_path"]]


def builtin_sweep_path(name: str) -> Path:
    path = _DATA_DIR / "sweeps" / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in (_DATA_DIR / "sweeps").glob("*.json"))
        raise ModelFileError(f"no builtin sweep {name!r}; available: {available}")
    return path


def default_sweep_path() -> Path:
    """The shipped height sweep named by the defaults file."""
    defaults = json.loads((_DATA_DIR / "leader_defaults.json").read_text())
    return builtin_sweep_path(defaults["sweep"])


def default_leader_setup(leader: RobotModel, sweep=None):
    """Shipped leader statics: fitted masses and spring constants.

    Masses start from the rod-plus-servo construction and are rescaled once
    so the mean unregularized holding force over the shipped height sweep
    sits at the documented target. Spring values come from the defaults
    file and are fitted, not measured.

    Returns ``(inertias, springs)``.
    """
    defaults = json.loads((_DATA_DIR / "leader_defaults.json").read_text())
    inertias = rod_and_servo_inertias(
        leader, rod_mass_per_m=defaults["rod_mass_per_m"], servo_mass=defaults["servo_mass_kg"]
    )
    if sweep is None:
        sweep = load_sweep(builtin_sweep_path(defaults["sweep"]))
    profile = force_height_profile(leader, inertias, [], sweep)
    mean = float(np.mean([p.force_n for p in profile]))
    if mean <= 0:
        raise AnalysisError("cannot calibrate masses: unregularized mean force is zero")
    inertias = scale_masses(inertias, defaults["holding_force_target_n"] / mean)
    springs = [
        SpringRegularizer(joint_index=s["joint_index"], stiffness=s["stiffness"],
                          rest_angle=s["rest_angle"])
        for s in defaults["springs"]
    ]
    return inertias, springs
