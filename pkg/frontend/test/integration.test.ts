// End-to-end against the real station: spawns the single-process demo
// (simulated follower, recorder, bridge), connects over a live
// WebSocket, drives the arm, records a take, and validates the file
// with the command-line tool. Requires the package installed for
// python3 (pip install -e .).

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { readdirSync } from "node:fs";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";
import { parseServerMsg, type ServerMsg } from "../src/protocol.js";

const REPO = fileURLToPath(new URL("../..", import.meta.url));
const TARGET = [0.5, -0.9, 1.1, -0.3, 0.8, 0.2];

let station: ChildProcess;
let takesDir = "";
const stdoutLines: string[] = [];

function waitForLine(match: string, timeoutMs: number): Promise<string> {
  return new Promise((resolve, reject) => {
    const found = stdoutLines.find((l) => l.includes(match));
    if (found) return resolve(found);
    const timer = setTimeout(
      () => reject(new Error(`no "${match}" in station output`)), timeoutMs);
    const probe = setInterval(() => {
      const line = stdoutLines.find((l) => l.includes(match));
      if (line) {
        clearTimeout(timer);
        clearInterval(probe);
        resolve(line);
      }
    }, 50);
  });
}

beforeAll(async () => {
  station = spawn("python3",
    ["-u", join(REPO, "demos", "console_station.py"), "120"],
    { stdio: ["ignore", "pipe", "pipe"] });
  let buffer = "";
  station.stdout!.on("data", (chunk: Buffer) => {
    buffer += chunk.toString();
    let idx;
    while ((idx = buffer.indexOf("\n")) >= 0) {
      stdoutLines.push(buffer.slice(0, idx));
      buffer = buffer.slice(idx + 1);
    }
  });
  station.stderr!.on("data", () => {});
  await waitForLine("console endpoint", 20_000);
  const dirLine = await waitForLine("recordings go to", 5_000);
  takesDir = dirLine.split("recordings go to:")[1].trim();
}, 30_000);

afterAll(async () => {
  if (station && station.exitCode === null) {
    station.kill("SIGINT");
    await new Promise((resolve) => station.once("exit", resolve));
  }
});

describe("live station", () => {
  it("serves the model first, tracks the sliders, and records a take",
      async () => {
    const ws = new WebSocket("ws://127.0.0.1:8765");
    const inbox: ServerMsg[] = [];
    let firstType = "";
    ws.on("message", (data) => {
      const msg = parseServerMsg(data.toString());
      if (!firstType) firstType = msg.type;
      inbox.push(msg);
    });
    await new Promise<void>((resolve, reject) => {
      ws.once("open", () => resolve());
      ws.once("error", reject);
    });

    const until = async <T>(pick: () => T | undefined, what: string,
                            timeoutMs = 15_000): Promise<T> => {
      const deadline = Date.now() + timeoutMs;
      for (;;) {
        const got = pick();
        if (got !== undefined) return got;
        if (Date.now() > deadline) throw new Error(`timed out: ${what}`);
        await new Promise((r) => setTimeout(r, 20));
      }
    };

    // The bridge introduces itself with the model before any stream.
    await until(() => inbox.find((m) => m.type === "model"), "model");
    expect(firstType).toBe("model");

    // Drive like the console does: clamped joint states at 30 Hz.
    let seq = 0;
    const driver = setInterval(() => {
      if (ws.readyState !== WebSocket.OPEN) return;
      ws.send(JSON.stringify({ type: "joint_state", node: 9, seq,
                               t_us: seq * 33_333, q: TARGET }));
      seq += 1;
    }, 33);

    try {
      // Wait for the follower to report the commanded pose.
      await until(() => {
        const last = [...inbox].reverse()
          .find((m) => m.type === "joint_state");
        if (!last || last.type !== "joint_state") return undefined;
        const worst = Math.max(
          ...last.q.map((v, i) => Math.abs(v - TARGET[i])));
        return worst < 1e-3 ? last : undefined;
      }, "follower to converge on the slider pose");

      // Start a recording; the bridge must echo the accepted control.
      ws.send(JSON.stringify({ type: "session_control", node: 9, seq: 0,
                               t_us: 0, action: "start" }));
      await until(() => inbox.find((m) =>
        m.type === "session_control" && m.action === "start"), "start echo");

      await new Promise((r) => setTimeout(r, 700)); // let ticks accumulate

      ws.send(JSON.stringify({ type: "session_control", node: 9, seq: 1,
                               t_us: 0, action: "stop" }));
      await until(() => inbox.find((m) =>
        m.type === "session_control" && m.action === "stop"), "stop echo");
      await new Promise((r) => setTimeout(r, 500)); // writer flush
    } finally {
      clearInterval(driver);
      ws.close();
    }

    const takes = readdirSync(takesDir).filter((f) => f.endsWith(".jsonl"));
    expect(takes.length).toBeGreaterThanOrEqual(1);
    const take = join(takesDir, takes[0]);
    const check = spawnSync("python3",
      ["-m", "minilead.cli", "validate", "--session", take],
      { encoding: "utf8" });
    expect(check.status, check.stdout + check.stderr).toBe(0);
  }, 60_000);
});
