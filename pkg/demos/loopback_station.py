"""A whole teleoperation station in one process, no hardware attached.

Three nodes over local TCP on the documented single-host ports: a leader
sampling a virtual servo bus, a simulated follower running the control
pipeline, and a passive recorder joining both streams into a session
file. Runs for a few seconds, then validates the file and reports how
well the follower tracked.
"""

import math
import tempfile
import time
from pathlib import Path

import numpy as np

from minilead import SessionMeta, load_builtin_model, load_session, validate
from minilead.nodes import (
    FOLLOWER_ID,
    LEADER_ID,
    RECORDER_ID,
    FollowerSimNode,
    LeaderNode,
    RecorderNode,
    identity_calibration,
)
from minilead.protocol import Node
from minilead.servo_bus import SinusoidChannel, VirtualBus, VirtualLeader

FOLLOWER_ADDR = "127.0.0.1:5556"
RECORDER_ADDR = "127.0.0.1:5557"

model = load_builtin_model("ur5")
out = Path(tempfile.mkdtemp()) / "demo_session.jsonl"

# Virtual leader: each joint swings a gentle sinusoid with its own
# frequency and phase, the same signal the CLI's --virtual sine uses.
channels = [
    SinusoidChannel(servo_id=i + 1, offset_ticks=2048, amplitude_rad=0.2,
                    frequency_hz=0.1 + 0.03 * i, phase_rad=0.7 * i)
    for i in range(model.dof)
]
bus = VirtualBus(VirtualLeader.sinusoid(channels))

# Receivers listen, senders dial. The recorder hears everyone; the
# follower hears the leader and feeds the recorder.
recorder = RecorderNode(
    Node("recorder", RECORDER_ID, listen=RECORDER_ADDR),
    SessionMeta(robot_name=model.name, dof=model.dof, alpha_scale=0.5,
                rate_hz=100.0, start_wall_iso8601="",
                notes="loopback demo"),
    out,
)
follower = FollowerSimNode(
    Node("follower", FOLLOWER_ID, listen=FOLLOWER_ADDR,
         peers=[RECORDER_ADDR]),
    model,
)
leader = LeaderNode(
    Node("leader", LEADER_ID, peers=[FOLLOWER_ADDR, RECORDER_ADDR]),
    bus, identity_calibration(model.dof),
)

print("station up, teleoperating for 5 seconds...")
recorder.start()
follower.start()
leader.start()
try:
    time.sleep(5.0)
finally:
    leader.stop()
    follower.stop()
    recorder.stop()

report = validate(out)
print(f"\nsession file: {out}")
print(f"validates: {'ok' if report.ok else report.defects}")

meta, records = load_session(out)
print(f"{len(records)} records at {meta.rate_hz:.0f} Hz nominal")

phases = {r.phase for r in records}
print(f"phases seen: {sorted(phases)}")

active = [r for r in records if r.phase == "active"]
if active:
    err = np.array([np.subtract(r.cmd_q, r.follower_q) for r in active])
    rms = float(np.sqrt(np.mean(err ** 2)))
    worst = float(np.max(np.abs(err)))
    print(f"tracking while active: rms {rms:.4f} rad, "
          f"worst joint error {worst:.4f} rad")

dt_us = np.diff([r.t_mono_us for r in records])
print(f"tick spacing: median {np.median(dt_us) / 1000:.2f} ms, "
      f"p95 {np.percentile(dt_us, 95) / 1000:.2f} ms")

speed = math.degrees(np.max(np.abs(np.diff(
    [r.cmd_q for r in records], axis=0)))) * 100
print(f"fastest commanded joint motion: {speed:.1f} deg/s")
