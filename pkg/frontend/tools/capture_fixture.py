"""Capture a real bridge stream into the test fixture.

Spawns the single-process console station from demos/, connects as a
console, drives the arm briefly, toggles recording, and writes every
received text frame (plus every frame this script sent, prefixed with
">> ") to test/fixtures/bridge_stream.jsonl. Run from frontend/:

    python3 tools/capture_fixture.py
"""

import json
import pathlib
import subprocess
import sys
import time

from websockets.sync.client import connect

ROOT = pathlib.Path(__file__).resolve().parent.parent
REPO = ROOT.parent
OUT = ROOT / "test" / "fixtures" / "bridge_stream.jsonl"

TARGET = [0.4, -1.1, 1.4, -0.4, 1.2, 0.3]


def main() -> int:
    station = subprocess.Popen(
        [sys.executable, "-u", str(REPO / "demos" / "console_station.py"),
         "30"],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
    try:
        line = station.stdout.readline()
        if "console endpoint" not in line:
            raise RuntimeError(f"unexpected station output: {line!r}")
        time.sleep(0.5)

        frames: list[str] = []
        with connect("ws://127.0.0.1:8765", open_timeout=10) as ws:
            deadline = time.monotonic() + 6.0
            seq = 0
            next_send = 0.0
            started = False
            stopped = False
            while time.monotonic() < deadline:
                now = time.monotonic()
                if now >= next_send:
                    out = json.dumps({"type": "joint_state", "node": 9,
                                      "seq": seq, "t_us": seq, "q": TARGET})
                    ws.send(out)
                    frames.append(">> " + out)
                    seq += 1
                    next_send = now + 1.0 / 30.0
                    if seq == 45 and not started:
                        out = json.dumps({"type": "session_control", "node": 9,
                                          "seq": 0, "t_us": 0,
                                          "action": "start"})
                        ws.send(out)
                        frames.append(">> " + out)
                        started = True
                    if seq == 120 and not stopped:
                        out = json.dumps({"type": "session_control", "node": 9,
                                          "seq": 1, "t_us": 0,
                                          "action": "stop"})
                        ws.send(out)
                        frames.append(">> " + out)
                        stopped = True
                try:
                    frames.append(ws.recv(timeout=0.01))
                except TimeoutError:
                    pass
        OUT.parent.mkdir(parents=True, exist_ok=True)
        OUT.write_text("\n".join(frames) + "\n")
        received = sum(1 for f in frames if not f.startswith(">> "))
        print(f"wrote {len(frames)} frames ({received} received) to {OUT}")
        return 0
    finally:
        station.terminate()
        station.wait(timeout=10)


if __name__ == "__main__":
    sys.exit(main())
