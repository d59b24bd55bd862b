"""Demonstration capture and deterministic replay.

Sessions are JSONL: a meta line, one record per line, and a footer with a
record count and a crc32 over every preceding byte. Floats go through
Python's shortest round-trip repr, so a replayed command stream is
bit-identical to the one recorded; feeding it to the simulated follower
reproduces the original trajectory exactly.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ContractViolation, SessionFileError

__all__ = [
    "SessionMeta",
    "Record",
    "ValidationReport",
    "write_session",
    "validate",
    "load_session",
    "replay",
]

SCHEMA_VERSION = 1
PHASES = ("syncing", "active", "faulted")

_META_FIELDS = {"schema_version", "robot_name", "dof", "alpha_scale",
                "rate_hz", "start_wall_iso8601", "notes"}
_RECORD_FIELDS = {"t_mono_us", "leader_q", "cmd_q", "follower_q", "gripper",
                  "safety_flags", "phase"}


@dataclass(frozen=True)
class SessionMeta:
    robot_name: str
    dof: int
    alpha_scale: float
    rate_hz: float
    start_wall_iso8601: str
    notes: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.dof < 1:
            raise ContractViolation(f"dof must be >= 1, got {self.dof}")
        if not self.rate_hz > 0:
            raise ContractViolation(f"rate_hz must be positive, got {self.rate_hz}")


@dataclass(frozen=True)
class Record:
    t_mono_us: int
    leader_q: tuple[float, ...]
    cmd_q: tuple[float, ...]
    follower_q: tuple[float, ...]
    gripper: float
    safety_flags: int
    phase: str

    def __post_init__(self):
        for name in ("leader_q", "cmd_q", "follower_q"):
            object.__setattr__(
                self, name, tuple(float(v) for v in getattr(self, name)))
        lengths = {len(self.leader_q), len(self.cmd_q), len(self.follower_q)}
        if len(lengths) != 1:
            raise ContractViolation(f"joint vector lengths differ: {lengths}")
        if not 0.0 <= self.gripper <= 1.0:
            raise ContractViolation(f"gripper must be in [0, 1], got {self.gripper}")
        if not 0 <= self.safety_flags < 2 ** 32:
            raise ContractViolation(f"safety_flags out of u32: {self.safety_flags}")
        if self.phase not in PHASES:
            raise ContractViolation(f"phase must be one of {PHASES}, got {self.phase!r}")


def _dumps(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode() + b"\n"


def write_session(path: str | Path, meta: SessionMeta,
                  records: Iterable[Record]) -> int:
    """Stream records to disk; returns the count. Flushes at least once a second.

    A disk error leaves the file without its footer, which is what marks a
    session as aborted.
    """
    crc = 0
    count = 0
    last_t = None
    last_flush = time.monotonic()
    try:
        with open(path, "wb") as fh:
            line = _dumps({"meta": asdict(meta)})
            crc = zlib.crc32(line, crc)
            fh.write(line)
            for record in records:
                if len(record.leader_q) != meta.dof:
                    raise ContractViolation(
                        f"record dof {len(record.leader_q)} != session dof {meta.dof}")
                if last_t is not None and record.t_mono_us <= last_t:
                    raise ContractViolation(
                        f"timestamps must strictly increase: {record.t_mono_us} "
                        f"after {last_t}")
                last_t = record.t_mono_us
                line = _dumps(asdict(record))
                crc = zlib.crc32(line, crc)
                fh.write(line)
                count += 1
                now = time.monotonic()
                if now - last_flush >= 1.0:
                    fh.flush()
                    last_flush = now
            fh.write(_dumps({"footer": {"count": count, "crc32": crc}}))
    except OSError as exc:
        raise SessionFileError(f"{path}: session aborted: {exc}") from exc
    return count


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    defects: tuple[str, ...]


def _check_meta(obj, defects) -> SessionMeta | None:
    if not isinstance(obj, dict) or set(obj) != {"meta"} or not isinstance(
            obj["meta"], dict):
        defects.append("line 1: expected a meta object")
        return None
    body = obj["meta"]
    if set(body) != _META_FIELDS:
        missing = _META_FIELDS - set(body)
        extra = set(body) - _META_FIELDS
        defects.append(f"line 1: meta fields wrong"
                       f"{' missing ' + str(sorted(missing)) if missing else ''}"
                       f"{' extra ' + str(sorted(extra)) if extra else ''}")
        return None
    if body["schema_version"] != SCHEMA_VERSION:
        defects.append(
            f"line 1: unrecognized schema_version {body['schema_version']!r}")
        return None
    try:
        return SessionMeta(**body)
    except (ContractViolation, TypeError) as exc:
        defects.append(f"line 1: bad meta: {exc}")
        return None


def _check_record(obj, line_no, meta, last_t, defects) -> int | None:
    """Returns the record timestamp when usable, else None."""
    if not isinstance(obj, dict) or set(obj) != _RECORD_FIELDS:
        defects.append(f"line {line_no}: expected a record with fields "
                       f"{sorted(_RECORD_FIELDS)}")
        return None
    try:
        record = Record(**obj)
    except (ContractViolation, TypeError) as exc:
        defects.append(f"line {line_no}: bad record: {exc}")
        return None
    if meta is not None and len(record.leader_q) != meta.dof:
        defects.append(f"line {line_no}: dof {len(record.leader_q)} does not "
                       f"match session dof {meta.dof}")
    if last_t is not None and record.t_mono_us <= last_t:
        defects.append(f"line {line_no}: timestamp {record.t_mono_us} does not "
                       f"increase past {last_t}")
    return record.t_mono_us


def validate(path: str | Path) -> ValidationReport:
    """Check structure, schema, timestamps, dof, footer count, and crc."""
    defects: list[str] = []
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        return ValidationReport(ok=False, defects=(f"cannot read: {exc}",))

    lines = data.splitlines(keepends=True)
    while lines and lines[-1].strip() == b"":
        lines.pop()
    if not lines:
        return ValidationReport(ok=False, defects=("empty file",))

    footer = None
    last_start = len(data) - len(lines[-1])
    try:
        last_obj = json.loads(lines[-1])
        if isinstance(last_obj, dict) and set(last_obj) == {"footer"}:
            footer = last_obj["footer"]
    except json.JSONDecodeError:
        pass
    if footer is None:
        defects.append("missing footer")
        body_lines = lines
    else:
        body_lines = lines[:-1]

    meta = None
    last_t = None
    count = 0
    for i, raw in enumerate(body_lines):
        line_no = i + 1
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            defects.append(f"line {line_no}: invalid JSON: {exc}")
            continue
        if line_no == 1:
            meta = _check_meta(obj, defects)
            continue
        count += 1
        t = _check_record(obj, line_no, meta, last_t, defects)
        if t is not None:
            last_t = t
    if not body_lines:
        defects.append("line 1: expected a meta object")

    if footer is not None:
        if not isinstance(footer, dict) or set(footer) != {"count", "crc32"}:
            defects.append("footer must have exactly count and crc32")
        else:
            if footer["count"] != count:
                defects.append(
                    f"footer count {footer['count']} != {count} records")
            actual = zlib.crc32(data[:last_start])
            if footer["crc32"] != actual:
                defects.append(
                    f"footer crc32 {footer['crc32']} != computed {actual}")

    return ValidationReport(ok=not defects, defects=tuple(defects))


def load_session(path: str | Path) -> tuple[SessionMeta, list[Record]]:
    """Parse a session that must validate cleanly."""
    report = validate(path)
    if not report.ok:
        raise SessionFileError(f"{path}: " + "; ".join(report.defects))
    lines = Path(path).read_bytes().splitlines()
    meta = SessionMeta(**json.loads(lines[0])["meta"])
    records = [Record(**json.loads(line)) for line in lines[1:-1] if line.strip()]
    return meta, records


def replay(path: str | Path, speed: float = 1.0, *,
           clock=time.monotonic, sleep=time.sleep) -> Iterator[Record]:
    """Records paced at recorded intervals divided by speed.

    Validation happens before the first record is produced; a bad file
    refuses to start. Pacing uses absolute deadlines against the injected
    clock, so drift does not accumulate. speed must be in (0, 10].
    """
    if not 0.0 < speed <= 10.0:
        raise ContractViolation(f"speed must be in (0, 10], got {speed}")
    _, records = load_session(path)

    def paced() -> Iterator[Record]:
        if not records:
            return
        t0 = clock()
        first_us = records[0].t_mono_us
        for record in records:
            deadline = t0 + (record.t_mono_us - first_us) / 1e6 / speed
            delay = deadline - clock()
            if delay > 0:
                sleep(delay)
            yield record

    return paced()
