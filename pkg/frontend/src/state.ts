// Latest-value snapshot of everything the console displays. Every field
// in the view traces to a received message; nothing is synthesized on
// this side of the socket. Rendering reads view() at display rate, fully
// decoupled from message arrival.

import {
  decodeFlags,
  type ModelMsg,
  type Phase,
  type SafetyView,
  type ServerMsg,
  type SessionAction,
} from "./protocol.js";

export type Connection = "connecting" | "connected" | "disconnected";

export interface Toast {
  text: string;
  atMs: number;
}

export interface ConsoleView {
  connection: Connection;
  stale: boolean;
  model: ModelMsg | null;
  followerQ: number[] | null;
  commandQ: number[] | null;
  gripper: number | null;
  safety: SafetyView | null;
  manipulability: number | null;
  minDistance: number | null;
  phase: Phase | null;
  heartbeatAgeMs: number | null;
  skeleton: number[][] | null;
  recording: boolean;
  lastError: string | null;
  toasts: Toast[];
}

const ACK_TIMEOUT_MS = 1000;
const TOAST_LIFETIME_MS = 5000;

interface PendingControl {
  action: SessionAction;
  sentAtMs: number;
}

export class ConsoleState {
  private connection: Connection = "disconnected";
  private model: ModelMsg | null = null;
  private followerId: number | null = null;
  private followerQ: number[] | null = null;
  private commandQ: number[] | null = null;
  private gripper: number | null = null;
  private safety: SafetyView | null = null;
  private manipulability: number | null = null;
  private minDistance: number | null = null;
  private skeleton: number[][] | null = null;
  private lastHeartbeatAtMs: number | null = null;
  private lastMessageAtMs: number | null = null;
  private recording = false;
  private lastError: string | null = null;
  private toasts: Toast[] = [];
  private pending: PendingControl[] = [];

  constructor(private readonly staleTimeoutMs = 500) {}

  onConnecting(): void {
    this.connection = "connecting";
  }

  onOpen(): void {
    this.connection = "connected";
    this.lastError = null;
  }

  onClose(): void {
    // Dropping per-connection freshness markers greys the old data out;
    // the values themselves stay visible as the last known snapshot.
    this.connection = "disconnected";
    this.lastHeartbeatAtMs = null;
    this.lastMessageAtMs = null;
  }

  controlSent(action: SessionAction, nowMs: number): void {
    this.pending.push({ action, sentAtMs: nowMs });
  }

  apply(msg: ServerMsg, nowMs: number): void {
    this.lastMessageAtMs = nowMs;
    switch (msg.type) {
      case "model":
        this.model = msg;
        break;
      case "joint_state":
        // Single-arm station: the follower is the node that also sends
        // safety and skeleton frames. Until one arrives, take any state.
        if (this.followerId === null || msg.node === this.followerId) {
          this.followerQ = msg.q;
        }
        break;
      case "joint_command":
        this.commandQ = msg.q;
        break;
      case "safety": {
        const dof = this.model ? this.model.dof : 0;
        this.followerId = msg.node;
        this.safety = decodeFlags(msg.flags, dof);
        this.manipulability = msg.manipulability;
        this.minDistance = msg.min_distance;
        break;
      }
      case "heartbeat":
        this.lastHeartbeatAtMs = nowMs;
        break;
      case "gripper_command":
        this.gripper = msg.value;
        break;
      case "session_control":
        if (msg.action === "start") this.recording = true;
        if (msg.action === "stop") this.recording = false;
        this.pending = this.pending.filter((p) => p.action !== msg.action);
        break;
      case "skeleton":
        this.followerId = msg.node;
        this.skeleton = msg.points;
        break;
      case "error":
        this.lastError = `${msg.path || "message"}: ${msg.message}`;
        this.pushToast(`rejected by bridge ${this.lastError}`, nowMs);
        break;
    }
  }

  parseFailed(reason: string, nowMs: number): void {
    this.lastError = reason;
    this.pushToast(`unreadable frame: ${reason}`, nowMs);
  }

  private pushToast(text: string, nowMs: number): void {
    this.toasts.push({ text, atMs: nowMs });
  }

  // Expire unanswered session controls and old toasts. Call once per
  // display frame with the same clock passed to apply().
  tick(nowMs: number): void {
    const still: PendingControl[] = [];
    for (const p of this.pending) {
      if (nowMs - p.sentAtMs > ACK_TIMEOUT_MS) {
        this.pushToast(`no acknowledgment for ${p.action}`, nowMs);
      } else {
        still.push(p);
      }
    }
    this.pending = still;
    this.toasts = this.toasts.filter((t) => nowMs - t.atMs < TOAST_LIFETIME_MS);
  }

  view(nowMs: number): ConsoleView {
    const connected = this.connection === "connected";
    const fresh = this.lastMessageAtMs !== null &&
      nowMs - this.lastMessageAtMs <= this.staleTimeoutMs;
    return {
      connection: this.connection,
      stale: !connected || !fresh,
      model: this.model,
      followerQ: this.followerQ,
      commandQ: this.commandQ,
      gripper: this.gripper,
      safety: this.safety,
      manipulability: this.manipulability,
      minDistance: this.minDistance,
      phase: this.safety ? this.safety.phase : null,
      heartbeatAgeMs: this.lastHeartbeatAtMs === null
        ? null
        : nowMs - this.lastHeartbeatAtMs,
      skeleton: this.skeleton,
      recording: this.recording,
      lastError: this.lastError,
      toasts: this.toasts.slice(),
    };
  }
}
