"""Single-process station with the browser bridge, driven by a console.

Starts the simulated follower, a recorder, and the WebSocket bridge on
the default ports, then idles until interrupted. There is no leader
process here: the console IS the leader. Its joint-state stream comes
back out of the bridge under the bridge's node id, so the follower and
recorder both treat the bridge as their leader. Point a console at
ws://127.0.0.1:8765 to drive the arm, reset faults, and start or stop
recordings. If a built web console is found next to this repository it
is served over HTTP as well.

Optional argument: run time in seconds (default: until Ctrl-C).
"""

import sys
import tempfile
import time
from pathlib import Path

from minilead import SessionMeta, load_builtin_model
from minilead.nodes import (
    BRIDGE_ID,
    FOLLOWER_ID,
    RECORDER_ID,
    BridgeNode,
    FollowerSimNode,
    RecorderNode,
)
from minilead.protocol import Node
from minilead.teleop import builtin_capsule_path, load_capsules

FOLLOWER_ADDR = "127.0.0.1:5556"
RECORDER_ADDR = "127.0.0.1:5557"
BRIDGE_ADDR = "127.0.0.1:5558"
WS_PORT = 8765

model = load_builtin_model("ur5")
capsules = load_capsules(builtin_capsule_path(model.name))
out_dir = Path(tempfile.mkdtemp(prefix="console_takes_"))

dist = Path(__file__).resolve().parent.parent / "frontend" / "dist"
http_port = 8080 if dist.is_dir() else None

recorder = RecorderNode(
    Node("recorder", RECORDER_ID, listen=RECORDER_ADDR),
    SessionMeta(robot_name=model.name, dof=model.dof, alpha_scale=0.5,
                rate_hz=100.0, start_wall_iso8601="",
                notes="console demo"),
    out_dir / "take.jsonl",
    leader_id=BRIDGE_ID,
    autostart=False,  # recordings start from the console
)
follower = FollowerSimNode(
    Node("follower", FOLLOWER_ID, listen=FOLLOWER_ADDR,
         peers=[RECORDER_ADDR, BRIDGE_ADDR]),
    model, capsules=capsules, leader_id=BRIDGE_ID,
)
bridge = BridgeNode(
    Node("bridge", BRIDGE_ID, listen=BRIDGE_ADDR,
         peers=[FOLLOWER_ADDR, RECORDER_ADDR]),
    model, ws_port=WS_PORT,
    http_port=http_port, assets_dir=dist if http_port else None,
)

recorder.start()
follower.start()
bridge.start()

print(f"console endpoint: ws://127.0.0.1:{WS_PORT}")
if http_port:
    print(f"web console:      http://127.0.0.1:{http_port}/")
print(f"recordings go to: {out_dir}")
print("Ctrl-C to stop")

duration = float(sys.argv[1]) if len(sys.argv) > 1 else None
try:
    if duration is None:
        while True:
            time.sleep(3600)
    else:
        time.sleep(duration)
except KeyboardInterrupt:
    pass
finally:
    bridge.stop()
    follower.stop()
    recorder.stop()
    takes = sorted(out_dir.glob("*.jsonl"))
    print(f"\nstopped; {len(takes)} recording(s) in {out_dir}")
