"""DH-chain robot models, forward kinematics, Jacobians and length scaling.

Conventions
-----------
Standard (distal) Denavit-Hartenberg parameters. The transform of frame i
relative to frame i-1 is

    A_i = Rot_z(theta_i + theta_offset_i) * Trans_z(d_i) * Trans_x(a_i) * Rot_x(alpha_i)

All joints are revolute. Frame 0 is the robot base; gravity and world
coordinates elsewhere in the package are expressed in this frame.

A leader device that is a uniformly scaled replica of a follower arm is
obtained with :func:`scale_model`, which multiplies every `a` and `d` by the
scale factor and leaves all angular quantities and joint limits untouched.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DomainError, ModelFileError, UnsupportedModelError

__all__ = [
    "DHParameter",
    "RobotModel",
    "Pose",
    "forward_kinematics",
    "jacobian",
    "manipulability",
    "scale_model",
    "clamp_to_limits",
    "load_robot_model",
    "model_from_dict",
    "builtin_model_path",
    "load_builtin_model",
]

_DATA_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class DHParameter:
    """One row of a standard DH table. Lengths in meters, angles in radians."""

    a: float
    d: float
    alpha_twist: float
    theta_offset: float

    def __post_init__(self):
        vals = (self.a, self.d, self.alpha_twist, self.theta_offset)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite DH parameter: {vals}")
        if self.a < 0:
            raise DomainError(f"link length a must be >= 0, got {self.a}")
        if not -math.pi <= self.alpha_twist <= math.pi:
            raise DomainError(f"link twist must be in [-pi, pi], got {self.alpha_twist}")


@dataclass(frozen=True)
class RobotModel:
    """A serial revolute chain with joint limits.

    ``scale`` records the cumulative length scale applied to this instance;
    followers are 1.0, a half-size leader replica is 0.5.
    """

    name: str
    dof: int
    dh: tuple[DHParameter, ...]
    q_min: np.ndarray
    q_max: np.ndarray
    v_max: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "dh", tuple(self.dh))
        for attr in ("q_min", "q_max", "v_max"):
            arr = np.asarray(getattr(self, attr), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        if len(self.dh) != self.dof:
            raise DomainError(f"model {self.name}: {len(self.dh)} DH rows for dof={self.dof}")
        for attr in ("q_min", "q_max", "v_max"):
            if getattr(self, attr).shape != (self.dof,):
                raise DomainError(f"model {self.name}: {attr} must have length {self.dof}")
        if not np.all(self.q_min < self.q_max):
            raise DomainError(f"model {self.name}: q_min must be < q_max per joint")
        if not np.all(self.v_max > 0):
            raise DomainError(f"model {self.name}: v_max must be positive")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise DomainError(f"model {self.name}: scale must be positive, got {self.scale}")

    def check_q(self, q) -> np.ndarray:
        """Validate a joint vector against this model and return it as an array."""
        arr = np.asarray(q, dtype=float)
        if arr.shape != (self.dof,):
            raise ContractViolation(
                f"model {self.name} expects {self.dof} joint values, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("joint vector contains non-finite values")
        return arr


@dataclass(frozen=True)
class Pose:
    """Position plus orthonormal rotation, both in the base frame."""

    position: np.ndarray
    rotation: np.ndarray

    ORTHONORMAL_TOL = 1e-9

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", r)
        if np.max(np.abs(r.T @ r - np.eye(3))) > self.ORTHONORMAL_TOL:
            raise DomainError("rotation matrix is not orthonormal")
        if abs(float(np.linalg.det(r)) - 1.0) > self.ORTHONORMAL_TOL:
            raise DomainError("rotation matrix must have determinant +1")


def _dh_transform(row: DHParameter, theta: float) -> np.ndarray:
    """4x4 homogeneous transform for one DH row at joint angle ``theta``."""
    th = theta + row.theta_offset
    ct, st = math.cos(th), math.sin(th)
    ca, sa = math.cos(row.alpha_twist), math.sin(row.alpha_twist)
    a, d = row.a, row.d
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def forward_kinematics(model: RobotModel, q) -> tuple[Pose, list[np.ndarray]]:
    """End-effector pose and the 4x4 transform of every joint frame.

    Returns ``(pose, frames)`` where ``frames[i]`` maps frame i+1 coordinates
    to the base frame; ``frames[-1]`` is the end-effector transform.
    """
    q = model.check_q(q)
    frames: list[np.ndarray] = []
    t = np.eye(4)
    for row, theta in zip(model.dh, q):
        t = t @ _dh_transform(row, float(theta))
        frames.append(t)
    pose = Pose(position=t[:3, 3].copy(), rotation=t[:3, :3].copy())
    return pose, frames


def jacobian(model: RobotModel, q) -> np.ndarray:
    """Geometric Jacobian (6 x dof): linear rows on top, angular rows below.

    Column i is [z_i x (p_ee - p_i); z_i] with z_i the axis of revolute
    joint i and p_i its frame origin, both in the base frame.
    """
    q = model.check_q(q)
    _, frames = forward_kinematics(model, q)
    p_ee = frames[-1][:3, 3]
    jac = np.empty((6, model.dof))
    z = np.array([0.0, 0.0, 1.0])
    p = np.zeros(3)
    for i in range(model.dof):
        if i > 0:
            z = frames[i - 1][:3, 2]
            p = frames[i - 1][:3, 3]
        jac[:3, i] = np.cross(z, p_ee - p)
        jac[3:, i] = z
    return jac


def manipulability(model: RobotModel, q) -> float:
    """Yoshikawa manipulability sqrt(det(J J^T)); zero at singularities.

    Computed as the product of the singular values of J, which equals
    sqrt(det(J J^T)) and stays well-conditioned near rank loss.
    """
    if model.dof < 6:
        raise UnsupportedModelError(
            f"manipulability needs a 6-dof task space; model {model.name} has dof={model.dof}"
        )
    jac = jacobian(model, q)
    sigma = np.linalg.svd(jac, compute_uv=False)
    return float(np.prod(sigma))


def scale_model(model: RobotModel, alpha: float) -> RobotModel:
    """Uniformly scaled replica: every a and d multiplied by ``alpha``.

    Joint limits, twists and offsets are unchanged, so joint-space
    trajectories transfer one-to-one between the two models.
    """
    if not (isinstance(alpha, (int, float)) and math.isfinite(alpha) and alpha > 0):
        raise DomainError(f"scale factor must be a positive finite number, got {alpha!r}")
    alpha = float(alpha)
    dh = tuple(
        DHParameter(a=row.a * alpha, d=row.d * alpha, alpha_twist=row.alpha_twist,
                    theta_offset=row.theta_offset)
        for row in model.dh
    )
    return RobotModel(
        name=model.name,
        dof=model.dof,
        dh=dh,
        q_min=model.q_min,
        q_max=model.q_max,
        v_max=model.v_max,
        scale=model.scale * alpha,
    )


def clamp_to_limits(model: RobotModel, q) -> tuple[np.ndarray, np.ndarray]:
    """Clamp each joint into [q_min, q_max]; flags mark clamped joints."""
    q = model.check_q(q)
    clamped = np.clip(q, model.q_min, model.q_max)
    flags = clamped != q
    return clamped, flags


_MODEL_REQUIRED = {"name", "dof", "dh", "q_min", "q_max", "v_max", "scale"}
_DH_REQUIRED = {"a", "d", "alpha", "theta_offset"}


def model_from_dict(raw: dict) -> RobotModel:
    """Build a RobotModel from parsed JSON, rejecting unknown fields."""
    if not isinstance(raw, dict):
        raise ModelFileError("model file must contain a JSON object")
    unknown = set(raw) - _MODEL_REQUIRED
    if unknown:
        raise ModelFileError(f"unknown model fields: {sorted(unknown)}")
    missing = _MODEL_REQUIRED - set(raw)
    if missing:
        raise ModelFileError(f"missing model fields: {sorted(missing)}")
    rows = []
    for i, entry in enumerate(raw["dh"]):
        if not isinstance(entry, dict):
            raise ModelFileError(f"dh[{i}] must be an object")
        unknown = set(entry) - _DH_REQUIRED
        if unknown:
            raise ModelFileError(f"dh[{i}] has unknown fields: {sorted(unknown)}")
        missing = _DH_REQUIRED - set(entry)
        if missing:
            raise ModelFileError(f"dh[{i}] is missing fields: {sorted(missing)}")
        try:
            rows.append(
                DHParameter(a=float(entry["a"]), d=float(entry["d"]),
                            alpha_twist=float(entry["alpha"]),
                            theta_offset=float(entry["theta_offset"]))
            )
        except DomainError as exc:
            raise ModelFileError(f"dh[{i}]: {exc}") from exc
    try:
        return RobotModel(
            name=str(raw["name"]),
            dof=int(raw["dof"]),
            dh=tuple(rows),
            q_min=np.asarray(raw["q_min"], dtype=float),
            q_max=np.asarray(raw["q_max"], dtype=float),
            v_max=np.asarray(raw["v_max"], dtype=float),
            scale=float(raw["scale"]),
        )
    except DomainError as exc:
        raise ModelFileError(str(exc)) from exc


def load_robot_model(path: str | Path) -> RobotModel:
    """Load a robot model JSON file (strict: unknown fields are errors)."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON: {exc}") from exc
    return model_from_dict(raw)


def builtin_model_path(name: str) -> Path:
    """Path of a model JSON file shipped with the package."""
    path = _DATA_DIR / "models" / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in (_DATA_DIR / "models").glob("*.json"))
        raise ModelFileError(f"no builtin model {name!r}; available: {available}")
    return path


def load_builtin_model(name: str) -> RobotModel:
    return load_robot_model(builtin_model_path(name))
