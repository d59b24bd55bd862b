// Wires the console together: socket -> state -> DOM, sliders -> wire.
// All robot truth on screen comes from received messages; the sliders
// only ever feed the outgoing stream.

import { VirtualLeader } from "./leader.js";
import {
  ParseError,
  parseServerMsg,
  gripperText,
  sessionControlText,
  type ModelMsg,
  type SessionAction,
} from "./protocol.js";
import { ReconnectingSocket } from "./socket.js";
import { drawView, fitExtent, project } from "./skeleton.js";
import { ConsoleState } from "./state.js";

const CONSOLE_NODE_ID = 9;

const params = new URLSearchParams(location.search);
const wsUrl = params.get("ws") ?? `ws://${location.hostname || "127.0.0.1"}:8765`;

const state = new ConsoleState();
let leader: VirtualLeader | null = null;
let model: ModelMsg | null = null;
let gripperSeq = 0;
let controlSeq = 0;
let lastGripperSendMs = -Infinity;
let viewExtentM = 0.3;

function nowMs(): number {
  return performance.now();
}

const socket = new ReconnectingSocket(wsUrl, {
  onConnecting: () => state.onConnecting(),
  onOpen: () => state.onOpen(),
  onClose: () => state.onClose(),
  onText: (text) => {
    const t = nowMs();
    let msg;
    try {
      msg = parseServerMsg(text);
    } catch (e) {
      if (e instanceof ParseError) state.parseFailed(e.message, t);
      return;
    }
    if (msg.type === "model") buildJointRows(msg);
    state.apply(msg, t);
  },
});

// -- static page references ---------------------------------------------------

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

const connectionBadge = byId<HTMLSpanElement>("connection");
const staleBadge = byId<HTMLSpanElement>("stale");
const phaseBadge = byId<HTMLSpanElement>("phase");
const recordBadge = byId<HTMLSpanElement>("recording");
const modelLine = byId<HTMLSpanElement>("model-line");
const heartbeatLine = byId<HTMLSpanElement>("heartbeat");
const manipLine = byId<HTMLSpanElement>("manipulability");
const distanceLine = byId<HTMLSpanElement>("min-distance");
const errorLine = byId<HTMLDivElement>("last-error");
const toastBox = byId<HTMLDivElement>("toasts");
const jointsBox = byId<HTMLDivElement>("joints");
const driveToggle = byId<HTMLInputElement>("drive");
const gripperSlider = byId<HTMLInputElement>("gripper");
const lamps = {
  leaderStale: byId<HTMLSpanElement>("lamp-stale"),
  nearSingularity: byId<HTMLSpanElement>("lamp-singularity"),
  selfCollision: byId<HTMLSpanElement>("lamp-self"),
  envCollision: byId<HTMLSpanElement>("lamp-env"),
};
const topCanvas = byId<HTMLCanvasElement>("view-top");
const sideCanvas = byId<HTMLCanvasElement>("view-side");

interface JointRow {
  slider: HTMLInputElement;
  setpoint: HTMLSpanElement;
  actual: HTMLSpanElement;
}
let jointRows: JointRow[] = [];

function buildJointRows(m: ModelMsg): void {
  if (model && model.dof === m.dof && model.name === m.name) {
    model = m;
    return; // reconnect to the same arm keeps slider positions
  }
  model = m;
  leader = new VirtualLeader(CONSOLE_NODE_ID, m.q_min, m.q_max, socket);
  leader.engage(driveToggle.checked);
  jointsBox.textContent = "";
  jointRows = [];
  for (let i = 0; i < m.dof; i++) {
    const row = document.createElement("div");
    row.className = "joint-row";
    const label = document.createElement("label");
    label.textContent = `j${i}`;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = String(m.q_min[i]);
    slider.max = String(m.q_max[i]);
    slider.step = "0.001";
    slider.value = String(leader.pose[i]);
    const setpoint = document.createElement("span");
    setpoint.className = "readout setpoint";
    const actual = document.createElement("span");
    actual.className = "readout actual";
    actual.textContent = "-";
    slider.addEventListener("input", () => {
      leader?.setJoint(i, Number(slider.value));
    });
    row.append(label, slider, setpoint, actual);
    jointsBox.append(row);
    jointRows.push({ slider, setpoint, actual });
  }
}

// -- operator inputs -----------------------------------------------------------

driveToggle.addEventListener("change", () => {
  leader?.engage(driveToggle.checked);
});

byId<HTMLButtonElement>("copy-pose").addEventListener("click", () => {
  const v = state.view(nowMs());
  if (!leader || !v.followerQ) return;
  leader.setPose(v.followerQ);
  jointRows.forEach((row, i) => {
    row.slider.value = String(v.followerQ![i]);
  });
});

function sendControl(action: SessionAction): void {
  const t = nowMs();
  if (socket.sendText(
      sessionControlText(CONSOLE_NODE_ID, controlSeq, Math.round(t * 1000),
                         action))) {
    controlSeq += 1;
    state.controlSent(action, t);
  }
}

byId<HTMLButtonElement>("record-start").addEventListener("click",
  () => sendControl("start"));
byId<HTMLButtonElement>("record-stop").addEventListener("click",
  () => sendControl("stop"));
byId<HTMLButtonElement>("reset-fault").addEventListener("click",
  () => sendControl("reset_fault"));

gripperSlider.addEventListener("input", () => {
  const t = nowMs();
  if (t - lastGripperSendMs < 1000 / 30) return;
  lastGripperSendMs = t;
  if (socket.sendText(gripperText(CONSOLE_NODE_ID, gripperSeq,
                                  Math.round(t * 1000),
                                  Number(gripperSlider.value)))) {
    gripperSeq += 1;
  }
});

// -- display loop --------------------------------------------------------------

function setBadge(el: HTMLElement, text: string, cls: string): void {
  el.textContent = text;
  el.className = `badge ${cls}`;
}

function fmt(v: number | null | undefined, digits = 3): string {
  return v === null || v === undefined ? "-" : v.toFixed(digits);
}

function render(): void {
  const t = nowMs();
  state.tick(t);
  const v = state.view(t);

  setBadge(connectionBadge, v.connection,
           v.connection === "connected" ? "ok" : "bad");
  setBadge(staleBadge, v.stale ? "stale" : "live", v.stale ? "bad" : "ok");
  document.body.classList.toggle("stale", v.stale);

  if (v.model) {
    modelLine.textContent = `${v.model.name}, ${v.model.dof} joints`;
  }
  heartbeatLine.textContent = v.heartbeatAgeMs === null
    ? "no heartbeat yet"
    : `heartbeat ${(v.heartbeatAgeMs / 1000).toFixed(1)} s ago`;

  if (v.phase) {
    setBadge(phaseBadge, v.phase,
             v.phase === "active" ? "ok" : v.phase === "faulted" ? "bad" : "warn");
  }
  setBadge(recordBadge, v.recording ? "recording" : "idle",
           v.recording ? "rec" : "off");

  if (v.safety) {
    lamps.leaderStale.classList.toggle("on", v.safety.leaderStale);
    lamps.nearSingularity.classList.toggle("on", v.safety.nearSingularity);
    lamps.selfCollision.classList.toggle("on", v.safety.selfCollision);
    lamps.envCollision.classList.toggle("on", v.safety.envCollision);
  }
  manipLine.textContent = fmt(v.manipulability, 4);
  distanceLine.textContent = fmt(v.minDistance, 3);
  errorLine.textContent = v.lastError ?? "";

  toastBox.textContent = "";
  for (const toast of v.toasts) {
    const el = document.createElement("div");
    el.className = "toast";
    el.textContent = toast.text;
    toastBox.append(el);
  }

  jointRows.forEach((row, i) => {
    row.setpoint.textContent = Number(row.slider.value).toFixed(3);
    row.actual.textContent = v.followerQ ? v.followerQ[i].toFixed(3) : "-";
  });

  for (const canvas of [topCanvas, sideCanvas]) {
    const ctx = canvas.getContext("2d");
    if (!ctx) continue;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (v.skeleton) {
      viewExtentM = fitExtent(v.skeleton, viewExtentM);
      const proj = project(v.skeleton, canvas.width, canvas.height, viewExtentM);
      const pts = canvas === topCanvas ? proj.top : proj.side;
      drawView(ctx, pts, v.stale ? "#8a8a8a" : "#2d7dd2");
    }
  }

  requestAnimationFrame(render);
}

socket.connect();
setInterval(() => leader?.tick(nowMs()), 1000 / 60);
requestAnimationFrame(render);
