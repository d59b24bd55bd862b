"""Framed half-duplex bus protocol for the leader's hobby servos.

The leader device reads joint angles from daisy-chained smart servos with
12-bit encoders. This module owns the byte-level framing (header, length,
CRC-16), the tick-to-radian calibration, the grouped position read, and a
virtual leader plus virtual bus so everything runs without hardware.

Frame layout, first byte to last:

    FF FF FD 00 | id | length u16 LE | instruction | params... | crc u16 LE

``length`` counts instruction + params + the two CRC bytes, so it equals
``len(params) + 3``. The CRC covers everything from the first header byte
through the last param byte. Payloads are not byte-stuffed; a header
pattern inside params is tolerated by CRC checking plus resynchronization.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BusError,
    CalibrationError,
    ContractViolation,
    EncodeError,
    StaleReadError,
)

__all__ = [
    "HEADER",
    "BROADCAST_ID",
    "INSTR_READ",
    "INSTR_SYNC_READ",
    "INSTR_STATUS",
    "PRESENT_POSITION_ADDR",
    "PRESENT_POSITION_LEN",
    "TICKS_PER_TURN",
    "RADIANS_PER_TICK",
    "crc16",
    "ServoFrame",
    "encode_frame",
    "ParseResult",
    "parse_frames",
    "CalibrationEntry",
    "CalibrationMap",
    "EncoderReading",
    "ticks_to_radians",
    "radians_to_ticks",
    "read_joint_state",
    "SinusoidChannel",
    "VirtualLeader",
    "virtual_leader_step",
    "VirtualBus",
    "CaptureBus",
    "SerialBus",
]

HEADER = b"\xff\xff\xfd\x00"
BROADCAST_ID = 0xFE
MAX_SERVO_ID = 252
MAX_PARAMS = 65532  # length field is u16 and counts params + 3

INSTR_READ = 0x02
INSTR_SYNC_READ = 0x82
INSTR_STATUS = 0x55

PRESENT_POSITION_ADDR = 132
PRESENT_POSITION_LEN = 4

TICKS_PER_TURN = 4096
RADIANS_PER_TICK = 2.0 * math.pi / TICKS_PER_TURN


def _build_crc_table() -> tuple[int, ...]:
    # polynomial 0x8005, init 0x0000, non-reflected
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x8005) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _build_crc_table()


def crc16(data: bytes) -> int:
    """CRC-16, polynomial 0x8005, init 0, non-reflected, of the whole buffer."""
    crc = 0
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[((crc >> 8) ^ byte) & 0xFF]
    return crc


def _check_servo_id(servo_id: int, allow_broadcast: bool) -> None:
    ok = 0 <= servo_id <= MAX_SERVO_ID or (allow_broadcast and servo_id == BROADCAST_ID)
    if not ok:
        raise EncodeError(f"servo id {servo_id} out of range")


@dataclass(frozen=True)
class ServoFrame:
    """One decoded bus frame. ``servo_id`` may be the broadcast id in requests."""

    servo_id: int
    instruction: int
    params: bytes
    crc: int

    def __post_init__(self):
        _check_servo_id(self.servo_id, allow_broadcast=True)
        if not 0 <= self.instruction <= 0xFF:
            raise EncodeError(f"instruction byte {self.instruction} out of range")
        if len(self.params) > MAX_PARAMS:
            raise EncodeError(f"params too long: {len(self.params)} > {MAX_PARAMS}")


def encode_frame(servo_id: int, instruction: int, params: bytes = b"") -> bytes:
    """Serialize one frame; the CRC is appended little-endian."""
    _check_servo_id(servo_id, allow_broadcast=True)
    if not 0 <= instruction <= 0xFF:
        raise EncodeError(f"instruction byte {instruction} out of range")
    if len(params) > MAX_PARAMS:
        raise EncodeError(f"params too long: {len(params)} > {MAX_PARAMS}")
    length = len(params) + 3
    body = HEADER + bytes([servo_id]) + length.to_bytes(2, "little") \
        + bytes([instruction]) + bytes(params)
    return body + crc16(body).to_bytes(2, "little")


@dataclass(frozen=True)
class ParseResult:
    frames: tuple[ServoFrame, ...]
    remainder: bytes
    crc_errors: int


def parse_frames(data: bytes) -> ParseResult:
    """Extract every complete, CRC-valid frame from an arbitrary byte buffer.

    Garbage is skipped by scanning forward to the next header candidate. A
    frame whose CRC fails is dropped and counted; scanning resumes one byte
    past the failed header so no interleaved real frame can be lost. The
    remainder holds a trailing incomplete candidate, if any, for the caller
    to prepend to the next read.
    """
    data = bytes(data)
    frames: list[ServoFrame] = []
    crc_errors = 0
    pos = 0
    while True:
        start = data.find(HEADER, pos)
        if start < 0:
            # the buffer may end on a split header: keep that prefix for next time
            tail = b""
            for n in (3, 2, 1):
                if len(data) - pos >= n and data[-n:] == HEADER[:n]:
                    tail = data[-n:]
                    break
            return ParseResult(tuple(frames), tail, crc_errors)
        if start + 7 > len(data):
            return ParseResult(tuple(frames), data[start:], crc_errors)
        servo_id = data[start + 4]
        length = int.from_bytes(data[start + 5:start + 7], "little")
        valid_id = servo_id <= MAX_SERVO_ID or servo_id == BROADCAST_ID
        if length < 3 or not valid_id:
            pos = start + 1
            continue
        end = start + 7 + length
        if end > len(data):
            return ParseResult(tuple(frames), data[start:], crc_errors)
        expected = int.from_bytes(data[end - 2:end], "little")
        if crc16(data[start:end - 2]) != expected:
            crc_errors += 1
            pos = start + 1
            continue
        frames.append(ServoFrame(
            servo_id=servo_id,
            instruction=data[start + 7],
            params=data[start + 8:end - 2],
            crc=expected,
        ))
        pos = end


@dataclass(frozen=True)
class CalibrationEntry:
    """Maps one servo's raw ticks to one joint's radians."""

    joint_index: int
    servo_id: int
    sign: int
    offset_ticks: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise CalibrationError(f"sign must be +1 or -1, got {self.sign}")
        if not 0 <= self.offset_ticks < TICKS_PER_TURN:
            raise CalibrationError(
                f"offset_ticks must be in [0, {TICKS_PER_TURN - 1}], got {self.offset_ticks}"
            )
        if self.joint_index < 0:
            raise CalibrationError(f"joint_index must be >= 0, got {self.joint_index}")
        _check_servo_id(self.servo_id, allow_broadcast=False)


@dataclass(frozen=True)
class CalibrationMap:
    """One entry per leader joint, stored in joint order."""

    entries: tuple[CalibrationEntry, ...]

    def __post_init__(self):
        ids = [e.servo_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise CalibrationError(f"duplicate servo ids in calibration: {ids}")
        indices = sorted(e.joint_index for e in self.entries)
        if indices != list(range(len(self.entries))):
            raise CalibrationError(
                f"joint indices must cover 0..{len(self.entries) - 1}, got {indices}"
            )
        ordered = tuple(sorted(self.entries, key=lambda e: e.joint_index))
        object.__setattr__(self, "entries", ordered)

    @property
    def dof(self) -> int:
        return len(self.entries)

    def entry_for(self, servo_id: int) -> CalibrationEntry:
        for entry in self.entries:
            if entry.servo_id == servo_id:
                return entry
        raise CalibrationError(f"no calibration entry for servo id {servo_id}")

    @staticmethod
    def from_dict(raw: dict) -> "CalibrationMap":
        if not isinstance(raw, dict) or "joints" not in raw:
            raise CalibrationError("calibration file must contain a 'joints' array")
        required = {"joint_index", "servo_id", "sign", "offset_ticks"}
        entries = []
        for i, item in enumerate(raw["joints"]):
            if not isinstance(item, dict) or set(item) != required:
                raise CalibrationError(
                    f"joints[{i}] must have exactly the fields {sorted(required)}"
                )
            entries.append(CalibrationEntry(
                joint_index=int(item["joint_index"]),
                servo_id=int(item["servo_id"]),
                sign=int(item["sign"]),
                offset_ticks=int(item["offset_ticks"]),
            ))
        return CalibrationMap(entries=tuple(entries))

    @staticmethod
    def load(path: str | Path) -> "CalibrationMap":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise CalibrationError(f"{path}: invalid JSON: {exc}") from exc
        return CalibrationMap.from_dict(raw)

    def to_dict(self) -> dict:
        return {"joints": [
            {"joint_index": e.joint_index, "servo_id": e.servo_id,
             "sign": e.sign, "offset_ticks": e.offset_ticks}
            for e in self.entries
        ]}


@dataclass(frozen=True)
class EncoderReading:
    """Raw encoder sample. Ticks may exceed one turn on geared joints."""

    servo_id: int
    ticks: int
    t_mono_us: int


def ticks_to_radians(reading: EncoderReading, entry: CalibrationEntry) -> float:
    """sign * (ticks - offset) * 2*pi/4096; linear, no wrap to one turn."""
    if reading.servo_id != entry.servo_id:
        raise CalibrationError(
            f"reading from servo {reading.servo_id} does not match "
            f"calibration entry for servo {entry.servo_id}"
        )
    return entry.sign * (reading.ticks - entry.offset_ticks) * RADIANS_PER_TICK


def radians_to_ticks(angle_rad: float, entry: CalibrationEntry) -> int:
    """Inverse of ticks_to_radians up to one-tick quantization."""
    return entry.offset_ticks + entry.sign * round(angle_rad / RADIANS_PER_TICK)


def _now_us() -> int:
    return time.monotonic_ns() // 1000


def _read_request(ids, grouped: bool) -> list[bytes]:
    addr = PRESENT_POSITION_ADDR.to_bytes(2, "little")
    width = PRESENT_POSITION_LEN.to_bytes(2, "little")
    if grouped:
        return [encode_frame(BROADCAST_ID, INSTR_SYNC_READ, addr + width + bytes(ids))]
    return [encode_frame(i, INSTR_READ, addr + width) for i in ids]


def read_joint_state(bus, calib: CalibrationMap, timeout_s: float = 0.02,
                     grouped: bool = True):
    """One position sample of every calibrated joint.

    Issues a grouped read of the present-position register for all servo
    ids (or sequential reads with ``grouped=False`` for flaky buses),
    converts replies through the calibration, and returns
    ``(joint_vector, t_mono_us)`` with the read-completion timestamp.

    A servo that does not answer within ``timeout_s`` raises
    ``StaleReadError`` naming it. A corrupted reply triggers one retry of
    the missing servos before giving up with ``BusError``.
    """
    if calib.dof == 0:
        raise ContractViolation("calibration map has no joints")
    ids = [e.servo_id for e in calib.entries]
    q = np.zeros(calib.dof)
    pending = set(ids)
    retried = False

    for request in _read_request(ids, grouped):
        bus.write(request)
    deadline = time.monotonic() + timeout_s
    buf = b""
    while pending:
        chunk = bus.read(4096)
        if not chunk:
            if time.monotonic() >= deadline:
                missing = sorted(pending)
                raise StaleReadError(
                    missing[0],
                    f"servo {missing[0]} did not answer within {timeout_s * 1e3:.0f} ms"
                    + (f" (also missing: {missing[1:]})" if len(missing) > 1 else ""),
                )
            time.sleep(0.0002)
            continue
        buf += chunk
        result = parse_frames(buf)
        buf = result.remainder
        for frame in result.frames:
            ok = (frame.instruction == INSTR_STATUS
                  and frame.servo_id in pending
                  and len(frame.params) == 1 + PRESENT_POSITION_LEN)
            if ok:
                ticks = int.from_bytes(frame.params[1:], "little", signed=True)
                entry = calib.entry_for(frame.servo_id)
                reading = EncoderReading(frame.servo_id, ticks, _now_us())
                q[entry.joint_index] = ticks_to_radians(reading, entry)
                pending.discard(frame.servo_id)
        if result.crc_errors and pending:
            if retried:
                raise BusError(
                    f"corrupted replies persisted after retry; missing servos {sorted(pending)}"
                )
            retried = True
            for request in _read_request(sorted(pending), grouped):
                bus.write(request)
            deadline = time.monotonic() + timeout_s
    return q, _now_us()


@dataclass(frozen=True)
class SinusoidChannel:
    """One virtual joint: angle(t) = amplitude * sin(2*pi*f*t + phase)."""

    servo_id: int
    offset_ticks: int
    amplitude_rad: float = 0.0
    frequency_hz: float = 0.0
    phase_rad: float = 0.0


@dataclass(frozen=True)
class _Script:
    times: tuple[float, ...]
    waypoints: tuple[tuple[float, ...], ...]  # one joint tuple per time


class VirtualLeader:
    """Deterministic tick generator standing in for a physical leader.

    Two modes: per-joint sinusoids, or a scripted waypoint table with
    linear interpolation (query before the first waypoint holds the first,
    after the last holds the last).
    """

    def __init__(self, channels, script: _Script | None = None):
        self.channels = tuple(channels)
        if not self.channels:
            raise ContractViolation("virtual leader needs at least one channel")
        ids = [c.servo_id for c in self.channels]
        if len(set(ids)) != len(ids):
            raise ContractViolation(f"duplicate servo ids in virtual leader: {ids}")
        self._script = script

    @staticmethod
    def sinusoid(channels) -> "VirtualLeader":
        return VirtualLeader(channels)

    @staticmethod
    def from_script(raw: dict, servo_ids, offsets) -> "VirtualLeader":
        """Build from a waypoint table ``{"waypoints": [{"t": s, "q": [rad...]}]}``."""
        if not isinstance(raw, dict) or "waypoints" not in raw or not raw["waypoints"]:
            raise ContractViolation("script must contain a non-empty 'waypoints' array")
        servo_ids = list(servo_ids)
        offsets = list(offsets)
        if len(servo_ids) != len(offsets):
            raise ContractViolation("servo_ids and offsets must have equal length")
        times, joints = [], []
        for i, wp in enumerate(raw["waypoints"]):
            if set(wp) != {"t", "q"} or len(wp["q"]) != len(servo_ids):
                raise ContractViolation(
                    f"waypoints[{i}] must have fields t and q with {len(servo_ids)} joints"
                )
            times.append(float(wp["t"]))
            joints.append(tuple(float(v) for v in wp["q"]))
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ContractViolation("waypoint times must be strictly increasing")
        channels = [SinusoidChannel(servo_id=s, offset_ticks=o)
                    for s, o in zip(servo_ids, offsets)]
        return VirtualLeader(channels, script=_Script(tuple(times), tuple(joints)))

    @staticmethod
    def load_script(path: str | Path, servo_ids, offsets) -> "VirtualLeader":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ContractViolation(f"{path}: invalid JSON: {exc}") from exc
        return VirtualLeader.from_script(raw, servo_ids, offsets)

    def _angle_at(self, index: int, t: float) -> float:
        if self._script is None:
            ch = self.channels[index]
            return ch.amplitude_rad * math.sin(
                2.0 * math.pi * ch.frequency_hz * t + ch.phase_rad)
        times, joints = self._script.times, self._script.waypoints
        if t <= times[0]:
            return joints[0][index]
        if t >= times[-1]:
            return joints[-1][index]
        hi = next(i for i, tt in enumerate(times) if tt > t)
        lo = hi - 1
        frac = (t - times[lo]) / (times[hi] - times[lo])
        return joints[lo][index] + frac * (joints[hi][index] - joints[lo][index])

    def ticks_at(self, servo_id: int, t: float) -> int:
        for index, ch in enumerate(self.channels):
            if ch.servo_id == servo_id:
                angle = self._angle_at(index, t)
                return ch.offset_ticks + round(angle / RADIANS_PER_TICK)
        raise CalibrationError(f"virtual leader has no servo id {servo_id}")


def virtual_leader_step(leader: VirtualLeader, t: float) -> list[EncoderReading]:
    """Readings of every channel at simulated time ``t`` seconds."""
    t_us = round(t * 1e6)
    return [
        EncoderReading(ch.servo_id, leader.ticks_at(ch.servo_id, t), t_us)
        for ch in leader.channels
    ]


class VirtualBus:
    """In-memory bus speaking the real byte protocol, backed by a VirtualLeader.

    ``unresponsive`` ids never answer (timeout testing); the first
    ``corrupt_responses`` replies get their last byte flipped (CRC-retry
    testing). ``clock`` supplies the leader's time in seconds.
    """

    def __init__(self, leader: VirtualLeader, clock=time.monotonic,
                 unresponsive=(), corrupt_responses: int = 0):
        self._leader = leader
        self._clock = clock
        self._unresponsive = frozenset(unresponsive)
        self._corrupt_budget = int(corrupt_responses)
        self._rx = bytearray()
        self._pending = b""

    def write(self, data: bytes) -> None:
        result = parse_frames(self._pending + bytes(data))
        self._pending = result.remainder
        for frame in result.frames:
            self._handle(frame)

    def _handle(self, frame: ServoFrame) -> None:
        if frame.instruction == INSTR_SYNC_READ and frame.servo_id == BROADCAST_ID:
            if len(frame.params) < 4:
                return
            addr = int.from_bytes(frame.params[0:2], "little")
            width = int.from_bytes(frame.params[2:4], "little")
            ids = list(frame.params[4:])
        elif frame.instruction == INSTR_READ and frame.servo_id != BROADCAST_ID:
            if len(frame.params) != 4:
                return
            addr = int.from_bytes(frame.params[0:2], "little")
            width = int.from_bytes(frame.params[2:4], "little")
            ids = [frame.servo_id]
        else:
            return
        if addr != PRESENT_POSITION_ADDR or width != PRESENT_POSITION_LEN:
            return
        t = self._clock()
        for servo_id in ids:
            if servo_id in self._unresponsive:
                continue
            try:
                ticks = self._leader.ticks_at(servo_id, t)
            except CalibrationError:
                continue
            params = bytes([0]) + ticks.to_bytes(4, "little", signed=True)
            reply = encode_frame(servo_id, INSTR_STATUS, params)
            if self._corrupt_budget > 0:
                self._corrupt_budget -= 1
                reply = reply[:-1] + bytes([reply[-1] ^ 0xFF])
            self._rx.extend(reply)

    def read(self, max_bytes: int) -> bytes:
        out = bytes(self._rx[:max_bytes])
        del self._rx[:len(out)]
        return out


class CaptureBus:
    """Replays a recorded byte capture; writes are ignored."""

    def __init__(self, capture: bytes):
        self._rx = bytearray(capture)

    def write(self, data: bytes) -> None:
        pass

    def read(self, max_bytes: int) -> bytes:
        out = bytes(self._rx[:max_bytes])
        del self._rx[:len(out)]
        return out


class SerialBus:
    """Physical serial port (8N1, default 57600 baud). Needs pyserial."""

    def __init__(self, port: str, baud: int = 57600, read_timeout_s: float = 0.002):
        try:
            import serial
        except ImportError as exc:
            raise BusError(
                "pyserial is not installed; install the 'serial' extra to use a real bus"
            ) from exc
        try:
            self._port = serial.Serial(
                port, baudrate=baud, bytesize=8, parity="N", stopbits=1,
                timeout=read_timeout_s,
            )
        except serial.SerialException as exc:
            raise BusError(f"cannot open serial port {port}: {exc}") from exc

    def write(self, data: bytes) -> None:
        self._port.write(data)

    def read(self, max_bytes: int) -> bytes:
        return self._port.read(max_bytes)

    def close(self) -> None:
        self._port.close()

    def __enter__(self) -> "SerialBus":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
