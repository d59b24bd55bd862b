// Message shapes for the bridge's WebSocket JSON, plus strict parsing.
// The bridge rejects unknown or missing fields with a JSON-pointer path;
// this side is equally strict so a schema drift fails loudly in tests
// instead of rendering garbage.

export interface ModelMsg {
  type: "model";
  name: string;
  dof: number;
  q_min: number[];
  q_max: number[];
  v_max: number[];
}

export interface JointMsg {
  type: "joint_state" | "joint_command";
  node: number;
  seq: number;
  t_us: number;
  q: number[];
}

export interface SafetyMsg {
  type: "safety";
  node: number;
  seq: number;
  t_us: number;
  flags: number;
  manipulability: number;
  min_distance: number;
}

export interface HeartbeatMsg {
  type: "heartbeat";
  node: number;
  seq: number;
  t_us: number;
}

export interface GripperMsg {
  type: "gripper_command";
  node: number;
  seq: number;
  t_us: number;
  value: number;
}

export type SessionAction = "start" | "stop" | "reset_fault";

export interface SessionControlMsg {
  type: "session_control";
  node: number;
  seq: number;
  t_us: number;
  action: SessionAction;
}

export interface SkeletonMsg {
  type: "skeleton";
  node: number;
  t_us: number;
  points: number[][];
}

export interface ErrorMsg {
  type: "error";
  path: string;
  message: string;
}

export type ServerMsg =
  | ModelMsg
  | JointMsg
  | SafetyMsg
  | HeartbeatMsg
  | GripperMsg
  | SessionControlMsg
  | SkeletonMsg
  | ErrorMsg;

export class ParseError extends Error {
  readonly path: string;

  constructor(path: string, message: string) {
    super(path ? `${path}: ${message}` : message);
    this.path = path;
  }
}

// Safety flag bits. Bits 8.. mark individual joints near a limit and
// bits 16-17 carry the control phase.
export const FLAG_LEADER_STALE = 1 << 0;
export const FLAG_NEAR_SINGULARITY = 1 << 1;
export const FLAG_SELF_COLLISION = 1 << 2;
export const FLAG_ENV_COLLISION = 1 << 3;
const FLAG_JOINT_BASE = 8;
const PHASE_SHIFT = 16;

export type Phase = "syncing" | "active" | "faulted";

const PHASES: Phase[] = ["syncing", "active", "faulted"];

export interface SafetyView {
  leaderStale: boolean;
  nearSingularity: boolean;
  selfCollision: boolean;
  envCollision: boolean;
  nearLimitJoints: number[];
  phase: Phase;
}

export function decodeFlags(flags: number, dof: number): SafetyView {
  const phaseCode = (flags >>> PHASE_SHIFT) & 0x3;
  const phase = PHASES[phaseCode];
  if (phase === undefined) {
    throw new ParseError("/flags", `unknown phase code ${phaseCode}`);
  }
  const near: number[] = [];
  for (let i = 0; i < dof; i++) {
    if (flags & (1 << (FLAG_JOINT_BASE + i))) near.push(i);
  }
  return {
    leaderStale: (flags & FLAG_LEADER_STALE) !== 0,
    nearSingularity: (flags & FLAG_NEAR_SINGULARITY) !== 0,
    selfCollision: (flags & FLAG_SELF_COLLISION) !== 0,
    envCollision: (flags & FLAG_ENV_COLLISION) !== 0,
    nearLimitJoints: near,
    phase,
  };
}

function isObject(v: unknown): v is Record<string, unknown> {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function requireNumber(raw: Record<string, unknown>, field: string): number {
  const v = raw[field];
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new ParseError(`/${field}`, "must be a finite number");
  }
  return v;
}

function requireInt(raw: Record<string, unknown>, field: string): number {
  const v = requireNumber(raw, field);
  if (!Number.isInteger(v) || v < 0) {
    throw new ParseError(`/${field}`, "must be a non-negative integer");
  }
  return v;
}

function requireString(raw: Record<string, unknown>, field: string): string {
  const v = raw[field];
  if (typeof v !== "string") {
    throw new ParseError(`/${field}`, "must be a string");
  }
  return v;
}

function requireNumbers(raw: Record<string, unknown>, field: string): number[] {
  const v = raw[field];
  if (!Array.isArray(v)) {
    throw new ParseError(`/${field}`, "must be an array of numbers");
  }
  return v.map((x, i) => {
    if (typeof x !== "number" || !Number.isFinite(x)) {
      throw new ParseError(`/${field}/${i}`, "must be a finite number");
    }
    return x;
  });
}

function checkFields(raw: Record<string, unknown>, allowed: string[]): void {
  for (const key of Object.keys(raw)) {
    if (!allowed.includes(key)) throw new ParseError(`/${key}`, "unknown field");
  }
  for (const key of allowed) {
    if (!(key in raw)) throw new ParseError(`/${key}`, "missing required field");
  }
}

const COMMON = ["type", "node", "seq", "t_us"];

export function parseServerMsg(text: string): ServerMsg {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (e) {
    throw new ParseError("", `invalid JSON: ${(e as Error).message}`);
  }
  if (!isObject(raw)) throw new ParseError("", "top-level value must be an object");
  const type = raw["type"];
  switch (type) {
    case "model": {
      checkFields(raw, ["type", "name", "dof", "q_min", "q_max", "v_max"]);
      const dof = requireInt(raw, "dof");
      const msg: ModelMsg = {
        type,
        name: requireString(raw, "name"),
        dof,
        q_min: requireNumbers(raw, "q_min"),
        q_max: requireNumbers(raw, "q_max"),
        v_max: requireNumbers(raw, "v_max"),
      };
      if (msg.q_min.length !== dof || msg.q_max.length !== dof ||
          msg.v_max.length !== dof) {
        throw new ParseError("/dof", "limit arrays do not match dof");
      }
      return msg;
    }
    case "joint_state":
    case "joint_command":
      checkFields(raw, [...COMMON, "q"]);
      return {
        type,
        node: requireInt(raw, "node"),
        seq: requireInt(raw, "seq"),
        t_us: requireInt(raw, "t_us"),
        q: requireNumbers(raw, "q"),
      };
    case "safety":
      checkFields(raw, [...COMMON, "flags", "manipulability", "min_distance"]);
      return {
        type,
        node: requireInt(raw, "node"),
        seq: requireInt(raw, "seq"),
        t_us: requireInt(raw, "t_us"),
        flags: requireInt(raw, "flags"),
        manipulability: requireNumber(raw, "manipulability"),
        min_distance: requireNumber(raw, "min_distance"),
      };
    case "heartbeat":
      checkFields(raw, COMMON);
      return {
        type,
        node: requireInt(raw, "node"),
        seq: requireInt(raw, "seq"),
        t_us: requireInt(raw, "t_us"),
      };
    case "gripper_command":
      checkFields(raw, [...COMMON, "value"]);
      return {
        type,
        node: requireInt(raw, "node"),
        seq: requireInt(raw, "seq"),
        t_us: requireInt(raw, "t_us"),
        value: requireNumber(raw, "value"),
      };
    case "session_control": {
      checkFields(raw, [...COMMON, "action"]);
      const action = requireString(raw, "action");
      if (action !== "start" && action !== "stop" && action !== "reset_fault") {
        throw new ParseError("/action", `unknown action ${JSON.stringify(action)}`);
      }
      return {
        type,
        node: requireInt(raw, "node"),
        seq: requireInt(raw, "seq"),
        t_us: requireInt(raw, "t_us"),
        action,
      };
    }
    case "skeleton": {
      checkFields(raw, ["type", "node", "t_us", "points"]);
      const pts = raw["points"];
      if (!Array.isArray(pts)) {
        throw new ParseError("/points", "must be an array of 3-vectors");
      }
      const points = pts.map((p, i) => {
        if (!Array.isArray(p) || p.length !== 3 ||
            p.some((c) => typeof c !== "number" || !Number.isFinite(c))) {
          throw new ParseError(`/points/${i}`, "must be a 3-vector of numbers");
        }
        return p as number[];
      });
      return {
        type,
        node: requireInt(raw, "node"),
        t_us: requireInt(raw, "t_us"),
        points,
      };
    }
    case "error":
      checkFields(raw, ["type", "path", "message"]);
      return {
        type,
        path: requireString(raw, "path"),
        message: requireString(raw, "message"),
      };
    default:
      throw new ParseError("/type", `unknown message type ${JSON.stringify(type)}`);
  }
}

// -- outgoing ----------------------------------------------------------------

export function clampToLimits(q: number[], qMin: number[], qMax: number[]): number[] {
  return q.map((v, i) => Math.min(Math.max(v, qMin[i]), qMax[i]));
}

export function jointStateText(node: number, seq: number, tUs: number,
                               q: number[]): string {
  return JSON.stringify({ type: "joint_state", node, seq, t_us: tUs, q });
}

export function heartbeatText(node: number, seq: number, tUs: number): string {
  return JSON.stringify({ type: "heartbeat", node, seq, t_us: tUs });
}

export function gripperText(node: number, seq: number, tUs: number,
                            value: number): string {
  const v = Math.min(Math.max(value, 0), 1);
  return JSON.stringify({ type: "gripper_command", node, seq, t_us: tUs, value: v });
}

export function sessionControlText(node: number, seq: number, tUs: number,
                                   action: SessionAction): string {
  return JSON.stringify({ type: "session_control", node, seq, t_us: tUs, action });
}
