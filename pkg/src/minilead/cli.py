"""Single-binary command line: one subcommand per station role.

A teleoperation station is a handful of processes wired into a static
topology. By default every subcommand assumes the single-host layout

    follower-sim  listens on 127.0.0.1:5556
    record        listens on 127.0.0.1:5557
    bridge        listens on 127.0.0.1:5558 (WebSocket on :8765)

and each role dials the peers it feeds. Override with --listen/--peers
for multi-host setups.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Log level comes
from the GELLO_LOG environment variable (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, MinileadError
from .follower_sim import ServoDynamics
from .kinematics import RobotModel, load_builtin_model, load_robot_model, scale_model
from .nodes import (
    BRIDGE_ID,
    FOLLOWER_ID,
    LEADER_ID,
    RECORDER_ID,
    REPLAY_ID,
    BridgeNode,
    FollowerSimNode,
    LeaderNode,
    RecorderNode,
    identity_calibration,
    run_replay,
)
from .protocol import MsgType, Node
from .recorder import SessionMeta, validate
from .servo_bus import (
    RADIANS_PER_TICK,
    CalibrationEntry,
    CalibrationMap,
    SinusoidChannel,
    VirtualBus,
    VirtualLeader,
    read_joint_state,
)
from .statics import (
    default_leader_setup,
    default_sweep_path,
    force_height_profile,
    load_sweep,
)
from .teleop import TeleopConfig, builtin_capsule_path, load_capsules, load_teleop_config

log = logging.getLogger("minilead.cli")

FOLLOWER_ADDR = "127.0.0.1:5556"
RECORDER_ADDR = "127.0.0.1:5557"
BRIDGE_ADDR = "127.0.0.1:5558"

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging():
    name = os.environ.get("GELLO_LOG", "info").strip().lower()
    level = _LOG_LEVELS.get(name)
    if level is None:
        level = logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)-5s %(name)s: %(message)s",
    )
    if name not in _LOG_LEVELS:
        log.warning("unknown GELLO_LOG value %r, using info", name)


def _resolve_model(spec: str) -> RobotModel:
    """A path to a model file, or the name of a shipped model."""
    path = Path(spec)
    if path.exists():
        return load_robot_model(path)
    return load_builtin_model(spec)


def _split_peers(raw: str | None) -> tuple[str, ...]:
    if not raw:
        return ()
    return tuple(p.strip() for p in raw.split(",") if p.strip())


def _run_until(duration: float | None):
    """Sleep until the duration elapses or the operator interrupts."""
    if duration is None:
        while True:
            time.sleep(3600.0)
    else:
        time.sleep(duration)


def _virtual_bus(mode: str, dof: int) -> VirtualBus:
    """A simulated leader device: staggered sinusoids or a waypoint script."""
    ids = list(range(1, dof + 1))
    offsets = [2048] * dof
    if mode == "sine":
        channels = [
            SinusoidChannel(
                servo_id=ids[i],
                offset_ticks=2048,
                amplitude_rad=0.25,
                frequency_hz=0.1 + 0.03 * i,
                phase_rad=0.7 * i,
            )
            for i in range(dof)
        ]
        leader = VirtualLeader.sinusoid(channels)
    else:
        leader = VirtualLeader.load_script(mode, ids, offsets)
    return VirtualBus(leader)


# -- subcommand runners -------------------------------------------------------


def _cmd_leader(args) -> int:
    if args.port is not None:
        if args.calib is None:
            raise ConfigError("--calib is required with --port")
        from .servo_bus import SerialBus

        bus = SerialBus(args.port)
        calib = CalibrationMap.load(args.calib)
    else:
        bus = _virtual_bus(args.virtual, args.dof)
        calib = (CalibrationMap.load(args.calib) if args.calib
                 else identity_calibration(args.dof))
    node = Node("leader", node_id=args.node_id, listen=args.listen,
                peers=_split_peers(args.peers))
    with LeaderNode(node, bus, calib, rate_hz=args.rate):
        log.info("leader publishing at %.0f Hz to %s", args.rate, args.peers)
        _run_until(args.duration)
    return 0


def _cmd_follower_sim(args) -> int:
    model = _resolve_model(args.model)
    config = load_teleop_config(args.config) if args.config else TeleopConfig()
    if args.capsules:
        capsules = load_capsules(args.capsules)
    elif config.capsule_file:
        capsules = load_capsules(config.capsule_file)
    else:
        try:
            capsules = load_capsules(builtin_capsule_path(model.name))
        except MinileadError:
            capsules = None  # no capsule set for this arm: collision checks off
    dynamics = ServoDynamics.from_model(model, time_constant_s=args.tau)
    node = Node("follower", node_id=args.node_id, listen=args.listen,
                peers=_split_peers(args.peers))
    with FollowerSimNode(node, model, config=config, dynamics=dynamics,
                         capsules=capsules, leader_id=args.leader_id):
        log.info("follower sim for %s listening on %s", model.name, args.listen)
        _run_until(args.duration)
    return 0


def _cmd_record(args) -> int:
    model = _resolve_model(args.model)
    meta = SessionMeta(
        robot_name=model.name,
        dof=model.dof,
        alpha_scale=args.alpha,
        rate_hz=args.rate,
        start_wall_iso8601=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        notes=args.notes,
    )
    node = Node("recorder", node_id=args.node_id, listen=args.listen,
                peers=_split_peers(args.peers))
    recorder = RecorderNode(node, meta, args.out, leader_id=args.leader_id,
                            follower_id=args.follower_id,
                            autostart=not args.wait_for_start)
    with recorder:
        log.info("recording to %s", args.out)
        try:
            _run_until(args.duration)
        except KeyboardInterrupt:
            pass  # stop() below flushes the footer before the process exits
    return 0


def _cmd_replay(args) -> int:
    node = Node("replay", node_id=args.node_id, listen=None,
                peers=_split_peers(args.peers))
    with node:
        time.sleep(args.connect_wait)
        count = run_replay(node, args.session, speed=args.speed)
    log.info("replayed %d commands from %s", count, args.session)
    return 0


def _cmd_validate(args) -> int:
    report = validate(args.session)
    if report.ok:
        print(f"{args.session}: ok")
        return 0
    for defect in report.defects:
        print(f"{args.session}: {defect}")
    return 1


def _cmd_bridge(args) -> int:
    model = _resolve_model(args.model)
    node = Node("bridge", node_id=args.node_id, listen=args.listen,
                peers=_split_peers(args.peers))
    bridge = BridgeNode(node, model, ws_host=args.ws_host, ws_port=args.ws_port,
                        follower_id=args.follower_id, http_port=args.http_port,
                        assets_dir=args.assets)
    with bridge:
        log.info("bridge: ws://%s:%d, station %s", args.ws_host, args.ws_port,
                 args.listen)
        _run_until(args.duration)
    return 0


def _cmd_analyze(args) -> int:
    leader = scale_model(_resolve_model(args.leader), args.scale)
    sweep = load_sweep(args.sweep) if args.sweep else None
    inertias, springs = default_leader_setup(leader, sweep=sweep)
    if sweep is None:
        sweep = load_sweep(default_sweep_path())
    plain = force_height_profile(leader, inertias, [], sweep)
    sprung = force_height_profile(leader, inertias, springs, sweep)
    lines = ["height_m,force_no_spring_N,force_spring_N,residual_Nm"]
    for p, s in zip(plain, sprung):
        lines.append(f"{p.height_m:.6g},{p.force_n:.6g},{s.force_n:.6g},"
                     f"{s.residual_torque_nm:.6g}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    log.info("wrote %d profile points to %s", len(plain), args.out)
    return 0


def _cmd_calibrate(args) -> int:
    ids = [int(v) for v in args.ids.split(",") if v.strip()]
    if not ids:
        raise ConfigError("--ids must name at least one servo")
    signs = ([int(v) for v in args.signs.split(",")] if args.signs
             else [1] * len(ids))
    if len(signs) != len(ids):
        raise ConfigError(f"--signs needs {len(ids)} entries, got {len(signs)}")
    if args.port is not None:
        from .servo_bus import SerialBus

        bus = SerialBus(args.port)
    else:
        bus = _virtual_bus(args.virtual, len(ids))
    # Read raw positions through a zero-offset map, then store the captured
    # pose as the calibration zero.
    probe = CalibrationMap(entries=tuple(
        CalibrationEntry(joint_index=i, servo_id=s, sign=1, offset_ticks=0)
        for i, s in enumerate(ids)
    ))
    q_raw, _ = read_joint_state(bus, probe)
    offsets = [int(round(v / RADIANS_PER_TICK)) % 4096 for v in q_raw]
    calib = CalibrationMap.from_dict({"joints": [
        {"joint_index": i, "servo_id": s, "sign": signs[i], "offset_ticks": offsets[i]}
        for i, s in enumerate(ids)
    ]})
    Path(args.out).write_text(json.dumps(calib.to_dict(), indent=2) + "\n")
    print(f"captured offsets {offsets} -> {args.out}")
    return 0


def _cmd_bench(args) -> int:
    with Node("sink", node_id=0, listen="127.0.0.1:0", heartbeat_hz=0) as sink:
        with Node("source", node_id=1, peers=[f"127.0.0.1:{sink.listen_port}"],
                  heartbeat_hz=0) as source:
            time.sleep(0.2)  # let the TCP connection come up
            period = 1.0 / args.rate
            latencies = []
            q = tuple(np.zeros(6))
            deadline = time.monotonic()
            while len(latencies) < args.count:
                source.publish(MsgType.JOINT_STATE, q=q)
                message = sink.take(timeout=1.0)
                if message is None:
                    raise ConfigError("loopback stalled: no message within 1 s")
                now_us = time.monotonic_ns() // 1000
                latencies.append((now_us - message.t_mono_us) / 1000.0)
                deadline += period
                pause = deadline - time.monotonic()
                if pause > 0:
                    time.sleep(pause)
    latencies.sort()
    p50 = latencies[len(latencies) // 2]
    p95 = latencies[int(len(latencies) * 0.95)]
    print(f"loopback latency over {args.count} messages: "
          f"p50 {p50:.3f} ms, p95 {p95:.3f} ms")
    return 0


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minilead",
        description="Scaled-leader teleoperation station tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("leader", help="publish joint states from a leader device")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--port", help="serial port of the physical leader")
    src.add_argument("--virtual", metavar="MODE",
                     help="'sine' or a path to a waypoint script JSON")
    p.add_argument("--calib", help="calibration map JSON "
                   "(required with --port; identity for --virtual)")
    p.add_argument("--dof", type=int, default=6,
                   help="joint count for a virtual leader (default 6)")
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--node-id", type=int, default=LEADER_ID)
    p.add_argument("--listen", default=None)
    p.add_argument("--peers", default=f"{FOLLOWER_ADDR},{RECORDER_ADDR}")
    p.add_argument("--duration", type=float, default=None,
                   help="run time in seconds (default: until interrupted)")
    p.set_defaults(run=_cmd_leader)

    p = sub.add_parser("follower-sim",
                       help="run the control pipeline and a simulated arm")
    p.add_argument("--model", required=True,
                   help="robot model: shipped name or JSON path")
    p.add_argument("--config", help="control settings JSON")
    p.add_argument("--capsules", help="collision capsule JSON "
                   "(default: shipped set for the model, if any)")
    p.add_argument("--tau", type=float, default=0.05,
                   help="servo time constant in seconds")
    p.add_argument("--leader-id", type=int, default=LEADER_ID)
    p.add_argument("--node-id", type=int, default=FOLLOWER_ID)
    p.add_argument("--listen", default=FOLLOWER_ADDR)
    p.add_argument("--peers", default=f"{RECORDER_ADDR},{BRIDGE_ADDR}")
    p.add_argument("--duration", type=float, default=None)
    p.set_defaults(run=_cmd_follower_sim)

    p = sub.add_parser("record", help="capture demonstration sessions to JSONL")
    p.add_argument("--out", required=True, help="session file path")
    p.add_argument("--model", required=True)
    p.add_argument("--alpha", type=float, default=0.5,
                   help="leader scale factor recorded in metadata")
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--notes", default="")
    p.add_argument("--wait-for-start", action="store_true",
                   help="do not record until a start message arrives")
    p.add_argument("--leader-id", type=int, default=LEADER_ID)
    p.add_argument("--follower-id", type=int, default=FOLLOWER_ID)
    p.add_argument("--node-id", type=int, default=RECORDER_ID)
    p.add_argument("--listen", default=RECORDER_ADDR)
    p.add_argument("--peers", default=None)
    p.add_argument("--duration", type=float, default=None)
    p.set_defaults(run=_cmd_record)

    p = sub.add_parser("replay", help="publish a recorded session as commands")
    p.add_argument("--session", required=True)
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--node-id", type=int, default=REPLAY_ID)
    p.add_argument("--peers", default=f"{FOLLOWER_ADDR},{RECORDER_ADDR}")
    p.add_argument("--connect-wait", type=float, default=0.3,
                   help="settle time before the first command")
    p.set_defaults(run=_cmd_replay)

    p = sub.add_parser("validate", help="check a session file, exit 0 if ok")
    p.add_argument("--session", required=True)
    p.set_defaults(run=_cmd_validate)

    p = sub.add_parser("bridge", help="WebSocket JSON bridge for the console")
    p.add_argument("--model", required=True)
    p.add_argument("--ws-host", default="127.0.0.1")
    p.add_argument("--ws-port", type=int, default=8765)
    p.add_argument("--http-port", type=int, default=None,
                   help="also serve console assets on this port")
    p.add_argument("--assets", default=None, help="directory of console assets")
    p.add_argument("--follower-id", type=int, default=FOLLOWER_ID)
    p.add_argument("--node-id", type=int, default=BRIDGE_ID)
    p.add_argument("--listen", default=BRIDGE_ADDR)
    p.add_argument("--peers", default=f"{FOLLOWER_ADDR},{RECORDER_ADDR}")
    p.add_argument("--duration", type=float, default=None)
    p.set_defaults(run=_cmd_bridge)

    p = sub.add_parser("analyze-regularization",
                       help="holding-force profile CSV, with and without springs")
    p.add_argument("--leader", default="ur5",
                   help="follower model to scale down (name or path)")
    p.add_argument("--scale", type=float, default=0.5)
    p.add_argument("--sweep", default=None,
                   help="height sweep JSON (default: shipped sweep)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(run=_cmd_analyze)

    p = sub.add_parser("calibrate",
                       help="capture the current pose as calibration offsets")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--port")
    src.add_argument("--virtual", metavar="MODE")
    p.add_argument("--ids", required=True, help="comma-separated servo ids")
    p.add_argument("--signs", default=None,
                   help="comma-separated +1/-1 per servo (default all +1)")
    p.add_argument("--out", required=True)
    p.set_defaults(run=_cmd_calibrate)

    p = sub.add_parser("bench", help="same-host pub/sub latency")
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--rate", type=float, default=1000.0)
    p.set_defaults(run=_cmd_bench)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.run(args)
    except KeyboardInterrupt:
        log.info("interrupted, shutting down")
        return 0
    except MinileadError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
