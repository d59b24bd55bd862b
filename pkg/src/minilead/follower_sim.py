"""First-order servo stand-in for a real follower arm.

Each joint tracks its command like an industrial position servo: desired
velocity proportional to position error, bounded by the joint's velocity
limit, with bounded acceleration, integrated semi-implicitly. No contact,
no gravity; the point is a deterministic, limit-respecting endpoint for
the rest of the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .kinematics import RobotModel

__all__ = [
    "ServoDynamics",
    "SimState",
    "initial_sim_state",
    "sim_step",
    "tracking_error",
]


@dataclass(frozen=True)
class ServoDynamics:
    """Per-joint tracking behavior: time constant, velocity and accel caps."""

    v_max: np.ndarray
    time_constant_s: float = 0.05
    a_max: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "v_max", np.asarray(self.v_max, dtype=float))
        if self.v_max.ndim != 1 or not np.all(self.v_max > 0):
            raise ContractViolation("v_max must be a vector of positive rates")
        if not self.time_constant_s > 0:
            raise ContractViolation(
                f"time_constant_s must be positive, got {self.time_constant_s}")
        if not self.a_max > 0:
            raise ContractViolation(f"a_max must be positive, got {self.a_max}")

    @classmethod
    def from_model(cls, model: RobotModel, time_constant_s: float = 0.05,
                   a_max: float = 20.0) -> "ServoDynamics":
        return cls(v_max=model.v_max, time_constant_s=time_constant_s,
                   a_max=a_max)


@dataclass(frozen=True)
class SimState:
    q: np.ndarray
    qd: np.ndarray
    t_mono_us: int

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "qd", np.asarray(self.qd, dtype=float))
        if self.q.shape != self.qd.shape:
            raise ContractViolation(
                f"q and qd shapes differ: {self.q.shape} vs {self.qd.shape}")


def initial_sim_state(model: RobotModel, q0=None) -> SimState:
    """At rest, at q0 or at the middle of the joint range."""
    if q0 is None:
        q = (model.q_min + model.q_max) / 2.0
    else:
        q = np.clip(model.check_q(q0), model.q_min, model.q_max)
    return SimState(q=q, qd=np.zeros(model.dof), t_mono_us=0)


def sim_step(state: SimState, cmd, dt: float, dynamics: ServoDynamics,
             model: RobotModel) -> SimState:
    """Advance one tick. dt must be in (0, 0.1]."""
    if not 0.0 < dt <= 0.1:
        raise ContractViolation(f"dt must be in (0, 0.1], got {dt}")
    cmd = model.check_q(cmd)

    v_des = np.clip((cmd - state.q) / dynamics.time_constant_s,
                    -dynamics.v_max, dynamics.v_max)
    dv_bound = dynamics.a_max * dt
    qd = state.qd + np.clip(v_des - state.qd, -dv_bound, dv_bound)
    qd = np.clip(qd, -dynamics.v_max, dynamics.v_max)

    q = state.q + qd * dt
    clamped = np.clip(q, model.q_min, model.q_max)
    qd = np.where(clamped == q, qd, 0.0)

    return SimState(q=clamped, qd=qd,
                    t_mono_us=state.t_mono_us + round(dt * 1e6))


def tracking_error(cmd_log, q_log) -> tuple[float, float]:
    """RMS and max of the per-tick worst-joint error between two logs."""
    cmd_log = np.asarray(cmd_log, dtype=float)
    q_log = np.asarray(q_log, dtype=float)
    if cmd_log.shape != q_log.shape:
        raise ContractViolation(
            f"log shapes differ: {cmd_log.shape} vs {q_log.shape}")
    if cmd_log.size == 0:
        raise ContractViolation("cannot score empty logs")
    per_tick = np.max(np.abs(cmd_log - q_log), axis=-1)
    rms = float(np.sqrt(np.mean(per_tick ** 2)))
    return rms, float(np.max(per_tick))
