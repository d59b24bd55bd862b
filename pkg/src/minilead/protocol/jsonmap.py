"""Lossless JSON mapping of wire messages for the operator console.

The WebSocket bridge sends each binary message to the browser as one JSON
text frame and accepts the same shapes back. Floats use Python's shortest
round-trip repr, so f64 payloads survive binary -> JSON -> binary
bit-exactly. Parsing is strict: unknown or missing fields fail with a
JSON-pointer path.
"""

from __future__ import annotations

import json
import math

from ..errors import SchemaError
from .wire import Message, MsgType, SessionOpcode

__all__ = ["message_to_json", "json_to_message"]

_TYPE_NAMES = {
    MsgType.JOINT_STATE: "joint_state",
    MsgType.JOINT_COMMAND: "joint_command",
    MsgType.SAFETY: "safety",
    MsgType.HEARTBEAT: "heartbeat",
    MsgType.GRIPPER_COMMAND: "gripper_command",
    MsgType.SESSION_CONTROL: "session_control",
}
_NAMES_TYPE = {v: k for k, v in _TYPE_NAMES.items()}

_OPCODE_NAMES = {
    SessionOpcode.START: "start",
    SessionOpcode.STOP: "stop",
    SessionOpcode.RESET_FAULT: "reset_fault",
}
_NAMES_OPCODE = {v: k for k, v in _OPCODE_NAMES.items()}

_COMMON_FIELDS = {"type", "node", "seq", "t_us"}
_FIELDS_BY_TYPE = {
    "joint_state": _COMMON_FIELDS | {"q"},
    "joint_command": _COMMON_FIELDS | {"q"},
    "safety": _COMMON_FIELDS | {"flags", "manipulability", "min_distance"},
    "heartbeat": _COMMON_FIELDS,
    "gripper_command": _COMMON_FIELDS | {"value"},
    "session_control": _COMMON_FIELDS | {"action"},
}


def message_to_json(m: Message) -> str:
    """One JSON text frame for one wire message."""
    out: dict = {
        "type": _TYPE_NAMES[m.msg_type],
        "node": m.node_id,
        "seq": m.seq,
        "t_us": m.t_mono_us,
    }
    if m.q is not None:
        out["q"] = list(m.q)
    if m.msg_type == MsgType.SAFETY:
        out["flags"] = m.flags
        out["manipulability"] = m.manipulability
        out["min_distance"] = m.min_distance
    if m.msg_type == MsgType.GRIPPER_COMMAND:
        out["value"] = m.gripper
    if m.msg_type == MsgType.SESSION_CONTROL:
        out["action"] = _OPCODE_NAMES[m.opcode]
    return json.dumps(out, separators=(",", ":"))


def _reject_constant(name: str):
    raise SchemaError("", f"non-finite number {name} is not allowed")


def _require_int(raw: dict, field: str, limit: int) -> int:
    value = raw[field]
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"/{field}", "must be an integer")
    if not 0 <= value <= limit:
        raise SchemaError(f"/{field}", f"must be in [0, {limit}]")
    return value


def _require_number(raw: dict, field: str) -> float:
    value = raw[field]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"/{field}", "must be a number")
    return float(value)


def json_to_message(text: str) -> Message:
    """Parse one JSON text frame back into a wire message; strict schema."""
    try:
        raw = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("", "top-level value must be an object")
    type_name = raw.get("type")
    if type_name not in _NAMES_TYPE:
        raise SchemaError("/type", f"unknown message type {type_name!r}")
    allowed = _FIELDS_BY_TYPE[type_name]
    for key in raw:
        if key not in allowed:
            raise SchemaError(f"/{key}", "unknown field")
    for key in allowed:
        if key not in raw:
            raise SchemaError(f"/{key}", "missing required field")

    node = _require_int(raw, "node", 0xFF)
    seq = _require_int(raw, "seq", 0xFFFFFFFF)
    t_us = _require_int(raw, "t_us", 0xFFFFFFFFFFFFFFFF)
    msg_type = _NAMES_TYPE[type_name]
    fields: dict = {}
    if msg_type in (MsgType.JOINT_STATE, MsgType.JOINT_COMMAND):
        q = raw["q"]
        if not isinstance(q, list):
            raise SchemaError("/q", "must be an array of numbers")
        values = []
        for i, v in enumerate(q):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaError(f"/q/{i}", "must be a number")
            if not math.isfinite(v):
                raise SchemaError(f"/q/{i}", "must be finite")
            values.append(float(v))
        fields["q"] = tuple(values)
    elif msg_type == MsgType.SAFETY:
        fields["flags"] = _require_int(raw, "flags", 0xFFFFFFFF)
        fields["manipulability"] = _require_number(raw, "manipulability")
        fields["min_distance"] = _require_number(raw, "min_distance")
    elif msg_type == MsgType.GRIPPER_COMMAND:
        fields["gripper"] = _require_number(raw, "value")
    elif msg_type == MsgType.SESSION_CONTROL:
        action = raw["action"]
        if action not in _NAMES_OPCODE:
            raise SchemaError("/action", f"unknown action {action!r}")
        fields["opcode"] = _NAMES_OPCODE[action]

    try:
        return Message(msg_type=msg_type, node_id=node, seq=seq,
                       t_mono_us=t_us, **fields)
    except Exception as exc:
        raise SchemaError("", str(exc)) from exc
