"""The leader-to-follower control loop.

Raw leader angles pass through unwrapping, exponential smoothing, limit
clamping, startup blending, and velocity rate limiting before they become
follower commands. A safety monitor turns the classic teleoperation
failure modes (self collision, table strikes, stale leader input, joint
limits, singularities) into explicit flags; self collision or a stale
leader latches the loop into a Faulted phase that only an operator reset
leaves.

Everything here is pure and tick-driven: state in, state out, no clocks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation, UnsupportedModelError
from .kinematics import RobotModel, clamp_to_limits, forward_kinematics, manipulability

__all__ = [
    "TeleopConfig",
    "load_teleop_config",
    "LinkCapsule",
    "load_capsules",
    "builtin_capsule_path",
    "capsules_in_world",
    "segment_distance",
    "self_collision_distance",
    "intra_arm_distance",
    "SafetyStatus",
    "Phase",
    "phase_to_flag_bits",
    "phase_from_flags",
    "TeleopState",
    "initial_state",
    "reset_fault",
    "smooth",
    "rate_limit",
    "sync_blend",
    "unwrap_nearest",
    "safety_check",
    "step",
]

_DATA_DIR = Path(__file__).parent / "data"

# SafetyStatus.flags_u32 bit layout (wire format of safety messages):
# bits 0-3 the named risks, bit 8+i per-joint limit proximity, bits 16-17
# the loop phase so status consumers see it without a second message type.
FLAG_LEADER_STALE = 1 << 0
FLAG_NEAR_SINGULARITY = 1 << 1
FLAG_SELF_COLLISION = 1 << 2
FLAG_ENV_COLLISION = 1 << 3
_FLAG_JOINT_BASE = 8  # bit 8+i: joint i near a limit
PHASE_BITS_SHIFT = 16


@dataclass(frozen=True)
class TeleopConfig:
    """Loop tuning. ``capsule_file`` enables collision checking when set.

    ``table_z_m`` enables the table half-space check: any link capsule
    dipping below that height (plus clearance) raises the environment
    flag. ``singularity_hard_stop`` escalates the singularity warning to a
    fault.
    """

    rate_hz: float = 100.0
    ema_alpha: float = 0.8
    sync_ramp_s: float = 2.0
    sync_eps_rad: float = 0.02
    v_max_scale: float = 1.0
    manip_threshold: float = 1e-3
    limit_margin_rad: float = 0.05
    leader_stale_ms: float = 200.0
    collision_clearance_m: float = 0.05
    capsule_file: str | None = None
    table_z_m: float | None = None
    singularity_hard_stop: bool = False

    def __post_init__(self):
        positive = ("rate_hz", "sync_ramp_s", "sync_eps_rad", "manip_threshold",
                    "limit_margin_rad", "leader_stale_ms", "collision_clearance_m")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("ema_alpha", "v_max_scale"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {getattr(self, name)}")


def load_teleop_config(path: str | Path) -> TeleopConfig:
    """Read a JSON file holding any subset of the TeleopConfig fields."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(TeleopConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config fields {sorted(unknown)}")
    return TeleopConfig(**raw)


# -- capsule geometry --------------------------------------------------------


@dataclass(frozen=True)
class LinkCapsule:
    """A swept-sphere segment attached to one link, in that link's DH frame."""

    link_index: int  # 1-based: capsule moves with frames[link_index - 1]
    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if self.link_index < 1:
            raise ConfigError(f"link_index must be >= 1, got {self.link_index}")
        if not self.radius > 0:
            raise ConfigError(f"capsule radius must be positive, got {self.radius}")
        object.__setattr__(self, "p0", tuple(float(v) for v in self.p0))
        object.__setattr__(self, "p1", tuple(float(v) for v in self.p1))


def load_capsules(path: str | Path) -> tuple[LinkCapsule, ...]:
    """Read a JSON array of ``{link_index, p0, p1, radius}``."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path}: capsule file must be a non-empty JSON array")
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or set(item) != {"link_index", "p0", "p1", "radius"}:
            raise ConfigError(
                f"{path}: entry {i} must have exactly link_index, p0, p1, radius"
            )
        out.append(LinkCapsule(
            link_index=int(item["link_index"]),
            p0=tuple(item["p0"]),
            p1=tuple(item["p1"]),
            radius=float(item["radius"]),
        ))
    return tuple(out)


def builtin_capsule_path(name: str) -> Path:
    path = _DATA_DIR / "capsules" / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in (_DATA_DIR / "capsules").glob("*.json"))
        raise ConfigError(f"no builtin capsule set {name!r}; available: {available}")
    return path


def capsules_in_world(model: RobotModel, q, capsules, base: np.ndarray | None = None):
    """Place link-local capsules with FK. Returns (p0, p1, radius, link_index) rows."""
    _, frames = forward_kinematics(model, q)
    placed = []
    for capsule in capsules:
        if capsule.link_index > model.dof:
            raise ConfigError(
                f"capsule references link {capsule.link_index} but model "
                f"{model.name} has {model.dof} links"
            )
        frame = frames[capsule.link_index - 1]
        if base is not None:
            frame = base @ frame
        r, t = frame[:3, :3], frame[:3, 3]
        placed.append((r @ np.asarray(capsule.p0) + t,
                       r @ np.asarray(capsule.p1) + t,
                       capsule.radius,
                       capsule.link_index))
    return placed


def segment_distance(p0, p1, q0, q1) -> float:
    """Distance between segments [p0,p1] and [q0,q1] (closest-point method)."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    if a <= 1e-18 and e <= 1e-18:
        return float(np.linalg.norm(r))
    if a <= 1e-18:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = float(d1 @ r)
        if e <= 1e-18:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = float(d1 @ d2)
            denom = a * e - b * b
            s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > 1e-18 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
    closest_p = p0 + s * d1
    closest_q = q0 + t * d2
    return float(np.linalg.norm(closest_p - closest_q))


def _capsule_pair_distance(a, b) -> float:
    gap = segment_distance(a[0], a[1], b[0], b[1]) - a[2] - b[2]
    return max(gap, 0.0)


def self_collision_distance(capsules_a, capsules_b) -> float:
    """Min surface distance over all cross pairs of two placed capsule sets."""
    best = math.inf
    for a in capsules_a:
        for b in capsules_b:
            best = min(best, _capsule_pair_distance(a, b))
    return best


def intra_arm_distance(placed) -> float:
    """Min surface distance within one arm, skipping same and adjacent links."""
    best = math.inf
    for i in range(len(placed)):
        for j in range(i + 1, len(placed)):
            if abs(placed[i][3] - placed[j][3]) <= 1:
                continue
            best = min(best, _capsule_pair_distance(placed[i], placed[j]))
    return best


# -- safety ------------------------------------------------------------------


@dataclass(frozen=True)
class SafetyStatus:
    near_joint_limit: tuple[bool, ...]
    near_singularity: bool
    self_collision_risk: bool
    env_collision_risk: bool
    leader_stale: bool
    min_capsule_distance: float  # inf when collision checking is off
    manipulability: float

    @property
    def faulting(self) -> bool:
        """True when this status forces the loop into Faulted."""
        return self.self_collision_risk or self.leader_stale

    @property
    def flags_u32(self) -> int:
        value = 0
        if self.leader_stale:
            value |= FLAG_LEADER_STALE
        if self.near_singularity:
            value |= FLAG_NEAR_SINGULARITY
        if self.self_collision_risk:
            value |= FLAG_SELF_COLLISION
        if self.env_collision_risk:
            value |= FLAG_ENV_COLLISION
        for i, near in enumerate(self.near_joint_limit):
            if near:
                value |= 1 << (_FLAG_JOINT_BASE + i)
        return value


def safety_check(model: RobotModel, partner_model: RobotModel | None, q_cmd,
                 q_partner, config: TeleopConfig, leader_age_ms: float,
                 capsules=None, partner_capsules=None,
                 base: np.ndarray | None = None,
                 partner_base: np.ndarray | None = None) -> SafetyStatus:
    """Evaluate every safety flag for one commanded configuration.

    Pure function: time enters only through ``leader_age_ms``. Collision
    checking runs when capsules are given; a partner arm requires its own
    capsules (same set when the arms are identical).
    """
    q_cmd = model.check_q(q_cmd)

    near_limit = tuple(
        bool(q_cmd[i] - model.q_min[i] < config.limit_margin_rad
             or model.q_max[i] - q_cmd[i] < config.limit_margin_rad)
        for i in range(model.dof)
    )

    try:
        manip = manipulability(model, q_cmd)
    except UnsupportedModelError:
        manip = math.inf
    near_singularity = manip < config.manip_threshold

    min_distance = math.inf
    self_risk = False
    env_risk = False
    if partner_model is not None and capsules is None:
        raise ConfigError("partner collision checking requires capsule geometry")
    if capsules is not None:
        placed = capsules_in_world(model, q_cmd, capsules, base)
        min_distance = intra_arm_distance(placed)
        if partner_model is not None:
            if q_partner is None:
                raise ContractViolation("partner model given without partner q")
            if partner_capsules is None:
                raise ConfigError("partner collision checking requires partner capsules")
            partner_placed = capsules_in_world(
                partner_model, q_partner, partner_capsules, partner_base)
            min_distance = min(
                min_distance, self_collision_distance(placed, partner_placed))
        self_risk = min_distance < config.collision_clearance_m
        if config.table_z_m is not None:
            # Link 1 is the mount; its height never changes, so it is exempt
            # from the table half-space check.
            for p0, p1, radius, link_index in placed:
                if link_index == 1:
                    continue
                lowest = min(p0[2], p1[2]) - radius
                if lowest < config.table_z_m + config.collision_clearance_m:
                    env_risk = True
                    break

    return SafetyStatus(
        near_joint_limit=near_limit,
        near_singularity=near_singularity,
        self_collision_risk=self_risk,
        env_collision_risk=env_risk,
        leader_stale=leader_age_ms > config.leader_stale_ms,
        min_capsule_distance=min_distance,
        manipulability=manip,
    )


# -- filtering primitives ----------------------------------------------------


def smooth(prev, raw, ema_alpha: float) -> np.ndarray:
    """Exponential moving average: ema_alpha * raw + (1 - ema_alpha) * prev."""
    prev = np.asarray(prev, dtype=float)
    raw = np.asarray(raw, dtype=float)
    if prev.shape != raw.shape:
        raise ContractViolation(f"shape mismatch: {prev.shape} vs {raw.shape}")
    return ema_alpha * raw + (1.0 - ema_alpha) * prev


def rate_limit(prev_cmd, target, v_max, dt: float) -> np.ndarray:
    """Move toward target, at most v_max * dt per joint per tick."""
    if not dt > 0:
        raise ContractViolation(f"dt must be positive, got {dt}")
    prev_cmd = np.asarray(prev_cmd, dtype=float)
    target = np.asarray(target, dtype=float)
    if prev_cmd.shape != target.shape:
        raise ContractViolation(f"shape mismatch: {prev_cmd.shape} vs {target.shape}")
    bound = np.asarray(v_max, dtype=float) * dt
    return prev_cmd + np.clip(target - prev_cmd, -bound, bound)


def sync_blend(follower_q, leader_q, elapsed_s: float, config: TeleopConfig):
    """Startup ramp from the follower's pose toward the leader's.

    Returns ``(command, synced)``; synced once the leader is within
    ``sync_eps_rad`` of the follower in the infinity norm.
    """
    follower_q = np.asarray(follower_q, dtype=float)
    leader_q = np.asarray(leader_q, dtype=float)
    if follower_q.shape != leader_q.shape:
        raise ContractViolation(f"shape mismatch: {follower_q.shape} vs {leader_q.shape}")
    fraction = min(elapsed_s / config.sync_ramp_s, 1.0) if elapsed_s > 0 else 0.0
    command = follower_q + fraction * (leader_q - follower_q)
    synced = bool(np.max(np.abs(leader_q - follower_q)) < config.sync_eps_rad)
    return command, synced


def unwrap_nearest(prev, raw) -> np.ndarray:
    """Per joint, shift raw by whole turns to the representative nearest prev."""
    prev = np.asarray(prev, dtype=float)
    raw = np.asarray(raw, dtype=float)
    turns = np.round((prev - raw) / (2.0 * math.pi))
    return raw + 2.0 * math.pi * turns


# -- phase machine -----------------------------------------------------------


class Phase(Enum):
    SYNCING = "syncing"
    ACTIVE = "active"
    FAULTED = "faulted"


_PHASE_CODES = {Phase.SYNCING: 0, Phase.ACTIVE: 1, Phase.FAULTED: 2}
_CODES_PHASE = {code: phase for phase, code in _PHASE_CODES.items()}


def phase_to_flag_bits(phase: Phase) -> int:
    """The phase's contribution to a flags_u32 word (bits 16-17)."""
    return _PHASE_CODES[phase] << PHASE_BITS_SHIFT


def phase_from_flags(flags_u32: int) -> Phase:
    code = (flags_u32 >> PHASE_BITS_SHIFT) & 0x3
    if code not in _CODES_PHASE:
        raise ContractViolation(f"flags carry unknown phase code {code}")
    return _CODES_PHASE[code]


@dataclass(frozen=True)
class TeleopState:
    """Loop state between ticks; time is accumulated dt, not a wall clock."""

    phase: Phase
    filtered_q: tuple[float, ...] | None
    last_cmd: tuple[float, ...] | None
    phase_entered_s: float
    t_s: float


def initial_state() -> TeleopState:
    return TeleopState(phase=Phase.SYNCING, filtered_q=None, last_cmd=None,
                       phase_entered_s=0.0, t_s=0.0)


def reset_fault(state: TeleopState) -> TeleopState:
    """Operator acknowledgment: Faulted returns to Syncing; otherwise no-op."""
    if state.phase is not Phase.FAULTED:
        return state
    return replace(state, phase=Phase.SYNCING, phase_entered_s=state.t_s)


def step(state: TeleopState, leader_q, follower_q, dt: float,
         config: TeleopConfig, model: RobotModel, *,
         capsules=None, partner_model=None, partner_q=None,
         partner_capsules=None, base=None, partner_base=None,
         leader_age_ms: float = 0.0):
    """One control tick: returns ``(state, command, status)``.

    Pipeline: unwrap, smooth, clamp to limits, sync blend while Syncing,
    rate limit, safety check. A faulting status (self collision risk or
    stale leader) holds the previous command and latches Faulted until
    ``reset_fault``. Deterministic: identical inputs give identical
    outputs, bit for bit.
    """
    if not dt > 0:
        raise ContractViolation(f"dt must be positive, got {dt}")
    leader_q = model.check_q(leader_q)
    follower_q = model.check_q(follower_q)
    t_now = state.t_s + dt
    v_max = model.v_max * config.v_max_scale

    def check(cmd, age_ms):
        return safety_check(model, partner_model, cmd, partner_q, config, age_ms,
                            capsules=capsules, partner_capsules=partner_capsules,
                            base=base, partner_base=partner_base)

    if state.phase is Phase.FAULTED:
        held = np.asarray(state.last_cmd if state.last_cmd is not None else follower_q)
        status = check(held, leader_age_ms)
        new_state = replace(state, t_s=t_now)
        return new_state, held, status

    prev_filtered = np.asarray(state.filtered_q) if state.filtered_q is not None \
        else leader_q
    unwrapped = unwrap_nearest(prev_filtered, leader_q)
    filtered = smooth(prev_filtered, unwrapped, config.ema_alpha)
    clamped, _ = clamp_to_limits(model, filtered)

    phase = state.phase
    phase_entered = state.phase_entered_s
    if phase is Phase.SYNCING:
        elapsed = state.t_s - state.phase_entered_s
        target, synced = sync_blend(follower_q, clamped, elapsed, config)
        if synced:
            phase = Phase.ACTIVE
            phase_entered = t_now
            target = clamped
    else:
        target = clamped

    prev_cmd = np.asarray(state.last_cmd) if state.last_cmd is not None else follower_q
    command = rate_limit(prev_cmd, target, v_max, dt)
    status = check(command, leader_age_ms)
    if status.faulting or (config.singularity_hard_stop and status.near_singularity):
        command = prev_cmd
        phase = Phase.FAULTED
        phase_entered = t_now

    new_state = TeleopState(
        phase=phase,
        filtered_q=tuple(float(v) for v in filtered),
        last_cmd=tuple(float(v) for v in command),
        phase_entered_s=phase_entered,
        t_s=t_now,
    )
    return new_state, command, status
