"""Runnable nodes: each wraps a protocol endpoint around one module.

A station is a handful of these wired into a static peer topology:
a leader node samples the handheld device (real bus or virtual) and
publishes joint states; the follower node runs the control pipeline and
a simulated arm, publishing states, commands, and safety status; a
recorder captures sessions; a replay node feeds a session back; a bridge
node translates between the binary protocol and browser WebSocket JSON.

Conventional node ids, used as defaults everywhere: 0 leader, 1 follower,
2 recorder, 3 bridge, 4 replay.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from pathlib import Path

import numpy as np

from .errors import BusError, ConfigError, MinileadError, StaleReadError
from .follower_sim import ServoDynamics, initial_sim_state, sim_step
from .kinematics import RobotModel, forward_kinematics
from .protocol import (
    Message,
    MsgType,
    Node,
    SessionOpcode,
    json_to_message,
    message_to_json,
)
from .recorder import Record, SessionMeta, replay, write_session
from .servo_bus import CalibrationEntry, CalibrationMap, read_joint_state
from .teleop import (
    Phase,
    TeleopConfig,
    initial_state,
    phase_from_flags,
    phase_to_flag_bits,
    reset_fault,
    step,
)

__all__ = [
    "LEADER_ID",
    "FOLLOWER_ID",
    "RECORDER_ID",
    "BRIDGE_ID",
    "REPLAY_ID",
    "TickLoop",
    "LeaderNode",
    "FollowerSimNode",
    "RecorderNode",
    "run_replay",
    "BridgeNode",
    "identity_calibration",
]

log = logging.getLogger("minilead.nodes")

LEADER_ID = 0
FOLLOWER_ID = 1
RECORDER_ID = 2
BRIDGE_ID = 3
REPLAY_ID = 4

# Safety payloads require finite floats; an unbounded capsule distance
# (collision checking off) is clamped to this on the wire.
DISTANCE_CLAMP_M = 1e9


def identity_calibration(dof: int) -> CalibrationMap:
    """Mid-range offsets and positive signs for servo ids 1..dof."""
    return CalibrationMap(entries=tuple(
        CalibrationEntry(servo_id=i + 1, joint_index=i, sign=1, offset_ticks=2048)
        for i in range(dof)
    ))


class TickLoop:
    """Fixed-rate worker thread with absolute deadlines (no drift)."""

    def __init__(self, rate_hz: float, tick, name: str):
        if not rate_hz > 0:
            raise ConfigError(f"rate_hz must be positive, got {rate_hz}")
        self._period = 1.0 / rate_hz
        self._tick = tick
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._stop.set()
        self._thread.join(timeout=2.0)

    def _run(self):
        deadline = time.monotonic()
        while not self._stop.is_set():
            now = time.monotonic()
            if now < deadline:
                if self._stop.wait(deadline - now):
                    return
                now = time.monotonic()
            try:
                self._tick(now)
            except MinileadError as exc:
                log.warning("%s tick failed: %s", self._thread.name, exc)
            except Exception:  # a dead silent loop is worse than a loud one
                log.exception("%s tick crashed", self._thread.name)
            deadline += self._period
            behind = time.monotonic() - deadline
            if behind > 1.0:  # fell far behind (suspend, debugger): resync
                deadline = time.monotonic()


class LeaderNode:
    """Samples the leader device and publishes joint states."""

    def __init__(self, node: Node, bus, calib: CalibrationMap,
                 rate_hz: float = 100.0):
        self.node = node
        self.bus = bus
        self.calib = calib
        self._loop = TickLoop(rate_hz, self._tick, "leader-tick")

    def start(self):
        self.node.start()
        self._loop.start()
        return self

    def stop(self):
        self._loop.stop()
        self.node.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _tick(self, now: float):
        try:
            q, _ = read_joint_state(self.bus, self.calib)
        except (StaleReadError, BusError) as exc:
            log.warning("leader read failed: %s", exc)
            return
        self.node.publish(MsgType.JOINT_STATE, q=tuple(q))


class FollowerSimNode:
    """The control pipeline plus a simulated arm behind one endpoint.

    Joint states from the leader drive the full pipeline; joint commands
    from another node (a replay) bypass it and drive the sim directly.
    Publishes its sim state, the applied command, and safety status every
    tick; session-control resets clear a latched fault.
    """

    def __init__(self, node: Node, model: RobotModel,
                 config: TeleopConfig | None = None,
                 dynamics: ServoDynamics | None = None,
                 capsules=None, leader_id: int = LEADER_ID,
                 direct_stale_ms: float = 300.0):
        self.node = node
        self.model = model
        self.config = config or TeleopConfig()
        self.dynamics = dynamics or ServoDynamics.from_model(model)
        self.capsules = capsules
        self.leader_id = leader_id
        self.dt = 1.0 / self.config.rate_hz
        self.direct_stale_s = direct_stale_ms / 1000.0

        self.teleop_state = initial_state()
        self.sim = initial_sim_state(model)
        self.last_status = None
        self._leader_q = None
        self._leader_seen = None  # arrival instant, monotonic seconds
        self._direct_cmd = None
        self._direct_seen = None
        self._loop = TickLoop(self.config.rate_hz, self._tick, "follower-tick")

    def start(self):
        self.node.start()
        self._loop.start()
        return self

    def stop(self):
        self._loop.stop()
        self.node.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _route(self, message: Message, now: float):
        if message.msg_type is MsgType.JOINT_STATE and \
                message.node_id == self.leader_id:
            self._leader_q = np.asarray(message.q, dtype=float)
            self._leader_seen = now
        elif message.msg_type is MsgType.JOINT_COMMAND and \
                message.node_id != self.node.node_id:
            self._direct_cmd = np.asarray(message.q, dtype=float)
            self._direct_seen = now
        elif message.msg_type is MsgType.SESSION_CONTROL:
            if message.opcode is SessionOpcode.RESET_FAULT:
                self.teleop_state = reset_fault(self.teleop_state)

    def _publish_state(self, cmd, status):
        self.node.publish(MsgType.JOINT_STATE, q=tuple(self.sim.q))
        if cmd is not None:
            self.node.publish(MsgType.JOINT_COMMAND, q=tuple(cmd))
        if status is not None:
            flags = status.flags_u32 | phase_to_flag_bits(self.teleop_state.phase)
            self.node.publish(
                MsgType.SAFETY,
                flags=flags,
                manipulability=min(status.manipulability, DISTANCE_CLAMP_M),
                min_distance=min(status.min_capsule_distance, DISTANCE_CLAMP_M),
            )

    def _tick(self, now: float):
        for message in self.node.drain():
            self._route(message, now)

        if self._direct_seen is not None and \
                now - self._direct_seen <= self.direct_stale_s:
            self.sim = sim_step(self.sim, self._direct_cmd, self.dt,
                                self.dynamics, self.model)
            self._publish_state(self._direct_cmd, None)
            return

        if self._leader_seen is None:
            return  # nothing to do yet; heartbeats keep flowing

        age_ms = (now - self._leader_seen) * 1000.0
        self.teleop_state, cmd, status = step(
            self.teleop_state, self._leader_q, self.sim.q, self.dt,
            self.config, self.model, capsules=self.capsules,
            leader_age_ms=age_ms)
        self.last_status = status
        self.sim = sim_step(self.sim, cmd, self.dt, self.dynamics, self.model)
        self._publish_state(cmd, status)


class RecorderNode:
    """Passive subscriber that joins the live streams into session files.

    Each joint command from the follower closes over the latest leader
    state, follower state, gripper, and safety flags to form one record.
    Session control messages start and stop capture; repeated starts get
    numbered file names. stop() finalizes any open session, so the footer
    is written even on interrupt.
    """

    def __init__(self, node: Node, meta: SessionMeta, out_path: str | Path,
                 leader_id: int = LEADER_ID, follower_id: int = FOLLOWER_ID,
                 autostart: bool = True):
        self.node = node
        self.meta = meta
        self.out_path = Path(out_path)
        self.leader_id = leader_id
        self.follower_id = follower_id
        self._autostart = autostart
        self._sessions = 0
        self._queue = None
        self._writer = None
        self._writer_path = None
        self._leader_q = None
        self._follower_q = None
        self._gripper = 0.0
        self._flags = 0
        self._phase = Phase.SYNCING
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="recorder-route",
                                        daemon=True)

    def start(self):
        self.node.start()
        if self._autostart:
            self.start_recording()
        self._thread.start()
        return self

    def stop(self):
        self._stop.set()
        self._thread.join(timeout=2.0)
        self.stop_recording()
        self.node.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    @property
    def recording(self) -> bool:
        return self._writer is not None and self._writer.is_alive()

    def session_path(self) -> Path | None:
        """Path of the currently or most recently written session."""
        return self._writer_path

    def start_recording(self):
        if self.recording:
            return
        self._sessions += 1
        if self._sessions == 1:
            path = self.out_path
        else:
            path = self.out_path.with_name(
                f"{self.out_path.stem}-{self._sessions}{self.out_path.suffix}")
        self._writer_path = path
        self._queue = queue.Queue()
        src = self._queue

        def pull():
            while True:
                item = src.get()
                if item is None:
                    return
                yield item

        def write():
            try:
                count = write_session(path, self.meta, pull())
                log.info("session %s closed with %d records", path, count)
            except MinileadError as exc:
                log.error("session %s aborted: %s", path, exc)

        self._writer = threading.Thread(target=write, name="recorder-write",
                                        daemon=True)
        self._writer.start()

    def stop_recording(self):
        if self._queue is not None:
            self._queue.put(None)
        if self._writer is not None:
            self._writer.join(timeout=5.0)
        self._queue = None
        self._writer = None

    def _route(self, message: Message):
        mtype, nid = message.msg_type, message.node_id
        if mtype is MsgType.JOINT_STATE and nid == self.leader_id:
            self._leader_q = tuple(message.q)
        elif mtype is MsgType.JOINT_STATE and nid == self.follower_id:
            self._follower_q = tuple(message.q)
        elif mtype is MsgType.GRIPPER_COMMAND:
            self._gripper = message.gripper
        elif mtype is MsgType.SAFETY and nid == self.follower_id:
            self._flags = message.flags
            self._phase = phase_from_flags(self._flags)
        elif mtype is MsgType.SESSION_CONTROL:
            if message.opcode is SessionOpcode.START:
                self.start_recording()
            elif message.opcode is SessionOpcode.STOP:
                self.stop_recording()
        elif mtype is MsgType.JOINT_COMMAND and nid == self.follower_id:
            self._emit(message)

    def _emit(self, message: Message):
        sink = self._queue  # stop_recording may null the attribute concurrently
        if sink is None:
            return
        cmd_q = tuple(message.q)
        dof = len(cmd_q)
        sink.put(Record(
            t_mono_us=message.t_mono_us,
            leader_q=self._leader_q or (0.0,) * dof,
            cmd_q=cmd_q,
            follower_q=self._follower_q or (0.0,) * dof,
            gripper=self._gripper,
            safety_flags=self._flags,
            phase=self._phase.value,
        ))

    def _run(self):
        while not self._stop.is_set():
            message = self.node.take(timeout=0.2)
            if message is not None:
                self._route(message)


def run_replay(node: Node, path: str | Path, speed: float = 1.0) -> int:
    """Publish a session's commands at recorded pace. Returns the count."""
    count = 0
    for record in replay(path, speed):
        node.publish(MsgType.JOINT_COMMAND, q=record.cmd_q)
        count += 1
    return count


class BridgeNode:
    """Binary protocol on one side, browser WebSocket JSON on the other.

    Every core message arriving on the station side is translated and
    broadcast to connected consoles; follower joint states additionally
    produce a skeleton message with world joint origins so the console can
    draw the arm without doing kinematics. Console JSON becomes fresh
    publications stamped with this node's identity. Accepted session
    controls are echoed back to every console, so a recording indicator
    always traces to a received message instead of local guesswork. Two
    console-only message shapes exist beside the core set: ``model``
    (sent once at connect) and ``skeleton``.
    """

    def __init__(self, node: Node, model: RobotModel, ws_host: str = "127.0.0.1",
                 ws_port: int = 8765, follower_id: int = FOLLOWER_ID,
                 http_port: int | None = None, assets_dir: str | Path | None = None):
        self.node = node
        self.model = model
        self.ws_host = ws_host
        self.ws_port = ws_port
        self.follower_id = follower_id
        self.http_port = http_port
        self.assets_dir = Path(assets_dir) if assets_dir else None
        self._clients = {}  # connection -> send lock
        self._clients_lock = threading.Lock()
        self._server = None
        self._httpd = None
        self._threads = []
        self._relay = TickLoop(200.0, self._relay_tick, "bridge-relay")

    # -- lifecycle -----------------------------------------------------------

    def start(self):
        from websockets.sync.server import serve

        self.node.start()
        self._server = serve(self._handle_client, self.ws_host, self.ws_port)
        t = threading.Thread(target=self._server.serve_forever,
                             name="bridge-ws", daemon=True)
        t.start()
        self._threads.append(t)
        if self.http_port is not None:
            self._start_http()
        self._relay.start()
        return self

    def stop(self):
        self._relay.stop()
        if self._server is not None:
            self._server.shutdown()
        if self._httpd is not None:
            self._httpd.shutdown()
        with self._clients_lock:
            clients = list(self._clients)
            self._clients.clear()
        for conn in clients:
            try:
                conn.close()
            except OSError:
                pass
        self.node.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _start_http(self):
        import functools
        from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer

        if self.assets_dir is None or not self.assets_dir.is_dir():
            raise ConfigError(
                f"assets directory {self.assets_dir} does not exist")
        handler = functools.partial(SimpleHTTPRequestHandler,
                                    directory=str(self.assets_dir))
        self._httpd = ThreadingHTTPServer((self.ws_host, self.http_port), handler)
        t = threading.Thread(target=self._httpd.serve_forever,
                             name="bridge-http", daemon=True)
        t.start()
        self._threads.append(t)

    # -- console side --------------------------------------------------------

    def _model_json(self) -> str:
        return json.dumps({
            "type": "model",
            "name": self.model.name,
            "dof": self.model.dof,
            "q_min": list(self.model.q_min),
            "q_max": list(self.model.q_max),
            "v_max": list(self.model.v_max),
        }, separators=(",", ":"))

    def _skeleton_json(self, message: Message) -> str:
        q = np.asarray(message.q, dtype=float)
        _, frames = forward_kinematics(self.model, q)
        points = [[0.0, 0.0, 0.0]] + [
            [float(v) for v in frame[:3, 3]] for frame in frames]
        return json.dumps({
            "type": "skeleton",
            "node": message.node_id,
            "t_us": message.t_mono_us,
            "points": points,
        }, separators=(",", ":"))

    def _handle_client(self, conn):
        lock = threading.Lock()
        with self._clients_lock:
            self._clients[conn] = lock
        try:
            with lock:
                conn.send(self._model_json())
            for text in conn:
                self._handle_inbound(conn, lock, text)
        except OSError:
            pass
        finally:
            with self._clients_lock:
                self._clients.pop(conn, None)

    def _handle_inbound(self, conn, lock, text: str):
        from .errors import SchemaError

        try:
            message = json_to_message(text)
        except SchemaError as exc:
            reply = json.dumps({"type": "error", "path": exc.path,
                                "message": str(exc)}, separators=(",", ":"))
            try:
                with lock:
                    conn.send(reply)
            except OSError:
                pass
            return
        if message.msg_type is MsgType.JOINT_STATE:
            self.node.publish(MsgType.JOINT_STATE, q=message.q)
        elif message.msg_type is MsgType.GRIPPER_COMMAND:
            self.node.publish(MsgType.GRIPPER_COMMAND, gripper=message.gripper)
        elif message.msg_type is MsgType.SESSION_CONTROL:
            sent = self.node.publish(MsgType.SESSION_CONTROL,
                                     opcode=message.opcode)
            self._broadcast(message_to_json(sent))
        # Heartbeats mark the console alive; nothing to forward.

    def _broadcast(self, text: str):
        with self._clients_lock:
            clients = list(self._clients.items())
        for conn, lock in clients:
            try:
                with lock:
                    conn.send(text)
            except OSError:
                with self._clients_lock:
                    self._clients.pop(conn, None)

    def _relay_tick(self, now: float):
        for message in self.node.drain():
            self._broadcast(message_to_json(message))
            if message.msg_type is MsgType.JOINT_STATE and \
                    message.node_id == self.follower_id:
                self._broadcast(self._skeleton_json(message))
