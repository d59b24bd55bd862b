// The virtual leader: slider values become the joint-state stream a
// physical leader arm would produce. Emission runs at 30 Hz while the
// operator is driving and never exceeds it; released, the console sends
// only a slow heartbeat so the wire stays quiet. Values are clamped to
// the model limits on every send, whatever the sliders claim.

import { clampToLimits, heartbeatText, jointStateText } from "./protocol.js";

export const EMIT_HZ = 30;
export const IDLE_HEARTBEAT_HZ = 1;

const EMIT_MIN_GAP_MS = 1000 / EMIT_HZ - 0.5; // tolerate timer jitter

export interface LeaderWire {
  sendText(text: string): boolean;
}

export class VirtualLeader {
  private q: number[];
  private engaged = false;
  private jointSeq = 0;
  private heartbeatSeq = 0;
  private lastEmitMs = -Infinity;
  private lastHeartbeatMs = -Infinity;

  constructor(
    private readonly node: number,
    private readonly qMin: number[],
    private readonly qMax: number[],
    private readonly wire: LeaderWire,
  ) {
    this.q = clampToLimits(new Array(qMin.length).fill(0), qMin, qMax);
  }

  setJoint(index: number, value: number): void {
    this.q[index] = value;
  }

  setPose(q: number[]): void {
    this.q = q.slice();
  }

  get pose(): number[] {
    return clampToLimits(this.q, this.qMin, this.qMax);
  }

  engage(on: boolean): void {
    this.engaged = on;
  }

  get driving(): boolean {
    return this.engaged;
  }

  // Call at timer rate; the gap guard makes the actual send rate
  // independent of how often the timer fires.
  tick(nowMs: number): void {
    if (this.engaged) {
      if (nowMs - this.lastEmitMs < EMIT_MIN_GAP_MS) return;
      this.lastEmitMs = nowMs;
      const clamped = clampToLimits(this.q, this.qMin, this.qMax);
      const tUs = Math.round(nowMs * 1000);
      if (this.wire.sendText(
          jointStateText(this.node, this.jointSeq, tUs, clamped))) {
        this.jointSeq += 1;
      }
      return;
    }
    if (nowMs - this.lastHeartbeatMs < 1000 / IDLE_HEARTBEAT_HZ) return;
    this.lastHeartbeatMs = nowMs;
    const tUs = Math.round(nowMs * 1000);
    if (this.wire.sendText(heartbeatText(this.node, this.heartbeatSeq, tUs))) {
      this.heartbeatSeq += 1;
    }
  }
}
