"""Binary message framing shared by every node.

Frame layout, first byte to last:

    47 4C 30 31 ("GL01") | body length u32 LE | body | crc16 u16 LE

Body: version u8 (=1), msg_type u8, node_id u8, dof u8, seq u32 LE,
t_mono_us u64 LE, then the type-specific payload. The CRC (same algorithm
as the servo bus) covers the body only. Joint payloads are little-endian
IEEE-754 doubles, one per joint.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from enum import IntEnum

from ..errors import EncodeError
from ..servo_bus import crc16

__all__ = [
    "MAGIC",
    "MAX_DOF",
    "MAX_BODY_LEN",
    "MsgType",
    "SessionOpcode",
    "Message",
    "encode_message",
    "DecodeResult",
    "decode_message",
    "staleness_check",
]

log = logging.getLogger("minilead.protocol")

MAGIC = b"GL01"
MAX_DOF = 16
MAX_BODY_LEN = 4096
_BODY_HEADER = struct.Struct("<BBBBIQ")  # version, msg_type, node_id, dof, seq, t_mono_us


class MsgType(IntEnum):
    JOINT_STATE = 1
    JOINT_COMMAND = 2
    SAFETY = 3
    HEARTBEAT = 4
    GRIPPER_COMMAND = 5
    SESSION_CONTROL = 6


class SessionOpcode(IntEnum):
    START = 1
    STOP = 2
    RESET_FAULT = 3


@dataclass(frozen=True)
class Message:
    """One immutable protocol message.

    Exactly the payload fields matching ``msg_type`` are set: ``q`` for
    joint state/command, ``flags``/``manipulability``/``min_distance`` for
    safety, ``gripper`` for gripper commands, ``opcode`` for session
    control, nothing for heartbeats.
    """

    msg_type: MsgType
    node_id: int
    seq: int
    t_mono_us: int
    q: tuple[float, ...] | None = None
    flags: int | None = None
    manipulability: float | None = None
    min_distance: float | None = None
    gripper: float | None = None
    opcode: SessionOpcode | None = None
    version: int = 1

    def __post_init__(self):
        if self.version != 1:
            raise EncodeError(f"unsupported protocol version {self.version}")
        object.__setattr__(self, "msg_type", MsgType(self.msg_type))
        if not 0 <= self.node_id <= 0xFF:
            raise EncodeError(f"node_id {self.node_id} out of u8 range")
        if not 0 <= self.seq <= 0xFFFFFFFF:
            raise EncodeError(f"seq {self.seq} out of u32 range")
        if not 0 <= self.t_mono_us <= 0xFFFFFFFFFFFFFFFF:
            raise EncodeError(f"t_mono_us {self.t_mono_us} out of u64 range")

        joint = self.msg_type in (MsgType.JOINT_STATE, MsgType.JOINT_COMMAND)
        want = {
            "q": joint,
            "flags": self.msg_type == MsgType.SAFETY,
            "manipulability": self.msg_type == MsgType.SAFETY,
            "min_distance": self.msg_type == MsgType.SAFETY,
            "gripper": self.msg_type == MsgType.GRIPPER_COMMAND,
            "opcode": self.msg_type == MsgType.SESSION_CONTROL,
        }
        for name, wanted in want.items():
            present = getattr(self, name) is not None
            if wanted and not present:
                raise EncodeError(f"{self.msg_type.name} message requires field {name}")
            if present and not wanted:
                raise EncodeError(f"{self.msg_type.name} message must not set {name}")

        if joint:
            q = tuple(float(v) for v in self.q)
            if not 1 <= len(q) <= MAX_DOF:
                raise EncodeError(f"dof must be 1..{MAX_DOF}, got {len(q)}")
            if not all(math.isfinite(v) for v in q):
                raise EncodeError("joint values must be finite")
            object.__setattr__(self, "q", q)
        if self.msg_type == MsgType.SAFETY:
            if not 0 <= self.flags <= 0xFFFFFFFF:
                raise EncodeError(f"safety flags {self.flags} out of u32 range")
            for name in ("manipulability", "min_distance"):
                value = float(getattr(self, name))
                if not math.isfinite(value):
                    raise EncodeError(f"{name} must be finite")
                object.__setattr__(self, name, value)
        if self.msg_type == MsgType.GRIPPER_COMMAND:
            value = float(self.gripper)
            if not 0.0 <= value <= 1.0:
                raise EncodeError(f"gripper value {value} outside [0, 1]")
            object.__setattr__(self, "gripper", value)
        if self.msg_type == MsgType.SESSION_CONTROL:
            object.__setattr__(self, "opcode", SessionOpcode(self.opcode))

    @property
    def dof(self) -> int:
        return len(self.q) if self.q is not None else 0


def _payload_bytes(m: Message) -> bytes:
    if m.q is not None:
        return struct.pack(f"<{len(m.q)}d", *m.q)
    if m.msg_type == MsgType.SAFETY:
        return struct.pack("<Idd", m.flags, m.manipulability, m.min_distance)
    if m.msg_type == MsgType.GRIPPER_COMMAND:
        return struct.pack("<d", m.gripper)
    if m.msg_type == MsgType.SESSION_CONTROL:
        return bytes([int(m.opcode)])
    return b""


def encode_message(m: Message) -> bytes:
    """Serialize one message; deterministic, bitwise stable."""
    body = _BODY_HEADER.pack(m.version, int(m.msg_type), m.node_id, m.dof,
                             m.seq, m.t_mono_us) + _payload_bytes(m)
    return MAGIC + len(body).to_bytes(4, "little") + body \
        + crc16(body).to_bytes(2, "little")


@dataclass(frozen=True)
class DecodeResult:
    messages: tuple[Message, ...]
    remainder: bytes
    crc_errors: int
    desync_errors: int


def _parse_body(body: bytes) -> Message | None:
    version, msg_type, node_id, dof, seq, t_us = _BODY_HEADER.unpack_from(body)
    payload = body[_BODY_HEADER.size:]
    if version != 1 or msg_type not in MsgType.__members__.values():
        return None
    msg_type = MsgType(msg_type)
    fields: dict = {}
    if msg_type in (MsgType.JOINT_STATE, MsgType.JOINT_COMMAND):
        if not 1 <= dof <= MAX_DOF or len(payload) != 8 * dof:
            return None
        q = struct.unpack(f"<{dof}d", payload)
        if not all(math.isfinite(v) for v in q):
            return None
        fields["q"] = q
    elif msg_type == MsgType.SAFETY:
        if dof != 0 or len(payload) != 20:
            return None
        flags, manip, dist = struct.unpack("<Idd", payload)
        if not (math.isfinite(manip) and math.isfinite(dist)):
            return None
        fields.update(flags=flags, manipulability=manip, min_distance=dist)
    elif msg_type == MsgType.HEARTBEAT:
        if dof != 0 or payload:
            return None
    elif msg_type == MsgType.GRIPPER_COMMAND:
        if dof != 0 or len(payload) != 8:
            return None
        (value,) = struct.unpack("<d", payload)
        if not (math.isfinite(value) and 0.0 <= value <= 1.0):
            return None
        fields["gripper"] = value
    elif msg_type == MsgType.SESSION_CONTROL:
        if dof != 0 or len(payload) != 1 or payload[0] not in (1, 2, 3):
            return None
        fields["opcode"] = SessionOpcode(payload[0])
    try:
        return Message(msg_type=msg_type, node_id=node_id, seq=seq,
                       t_mono_us=t_us, **fields)
    except EncodeError:
        return None


def decode_message(data: bytes) -> DecodeResult:
    """Extract complete CRC-valid messages from an arbitrary byte buffer.

    Resynchronizes by scanning forward to the next magic on any structural
    problem (bad length, bad version, malformed payload) and counts those
    separately from CRC failures. The remainder holds a trailing incomplete
    frame for the caller to prepend to its next read.
    """
    data = bytes(data)
    messages: list[Message] = []
    crc_errors = 0
    desync = 0
    pos = 0
    while True:
        start = data.find(MAGIC, pos)
        if start < 0:
            tail = b""
            for n in (3, 2, 1):
                if len(data) - pos >= n and data[-n:] == MAGIC[:n]:
                    tail = data[-n:]
                    break
            return DecodeResult(tuple(messages), tail, crc_errors, desync)
        if start + 8 > len(data):
            return DecodeResult(tuple(messages), data[start:], crc_errors, desync)
        body_len = int.from_bytes(data[start + 4:start + 8], "little")
        if not _BODY_HEADER.size <= body_len <= MAX_BODY_LEN:
            desync += 1
            pos = start + 1
            continue
        end = start + 8 + body_len + 2
        if end > len(data):
            return DecodeResult(tuple(messages), data[start:], crc_errors, desync)
        body = data[start + 8:end - 2]
        if crc16(body) != int.from_bytes(data[end - 2:end], "little"):
            crc_errors += 1
            pos = start + 1
            continue
        message = _parse_body(body)
        if message is None:
            desync += 1
            pos = start + 1
            continue
        messages.append(message)
        pos = end


def staleness_check(last_heartbeat_t_us: int, now_us: int, timeout_ms: float) -> bool:
    """True iff the gap since the last heartbeat strictly exceeds the timeout.

    A clock running backwards is itself a fault: treated as stale and logged.
    """
    if now_us < last_heartbeat_t_us:
        log.warning("monotonic clock regression: now=%d < last=%d",
                    now_us, last_heartbeat_t_us)
        return True
    return (now_us - last_heartbeat_t_us) > timeout_ms * 1000.0
