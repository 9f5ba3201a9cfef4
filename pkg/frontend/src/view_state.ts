/** Client-side session state.
 *
 * Socket callbacks mutate a single ViewState through the reducers
 * here; the render loop only reads it.  Two snapshots are kept so the
 * backbone can be interpolated between broadcasts for smooth drawing,
 * and everything the HUD shows (staleness, latency, trails, the
 * rolling error history) is derived in this module so rendering stays
 * a pure function of the state it is handed.
 */

import type { HelloPayload, ObstacleShape, ServerMessage, StatePayload } from "./protocol.js";

export const STALE_AFTER_MS = 500;
export const TRAIL_CAP = 150;
export const ERROR_CAP = 360;
/** Fallback broadcast period before the hello frame arrives. */
const DEFAULT_PERIOD_MS = 40;
/** The session host's shipped default tip target (mm).  The wire state
 * carries the tip error, not the target itself, so the console tracks
 * the target locally: this default until the operator moves it, and
 * back to it when the session resets. */
export const DEFAULT_TIP_TARGET: [number, number] = [0, 500];

export type Connection = "connecting" | "open" | "closed";

export interface Snapshot {
  state: StatePayload;
  seq: number;
  /** Server timestamp (ms). */
  t: number;
  /** Client clock when the frame arrived, for staleness/interpolation. */
  arrivedMs: number;
}

export interface DragState {
  entity: "obstacle" | "target";
  /** Current pointer position in world mm. */
  x: number;
  y: number;
}

export interface ViewState {
  connection: Connection;
  hello: HelloPayload | null;
  latest: Snapshot | null;
  prev: Snapshot | null;
  /** Node xy history, oldest first; one entry per advanced step. */
  trails: [number, number][][];
  errors: { step: number; mm: number }[];
  drag: DragState | null;
  advanced: boolean;
  /** Where the tip is being steered, in world mm. */
  targetWorld: [number, number];
  /** Send time of the most recent client frame still awaiting a state. */
  pendingSendT: number | null;
  /** Displayed round trip: server t minus client send t. */
  latencyMs: number | null;
  /** Client clock of the last send dropped while disconnected. */
  dropNoticeMs: number | null;
  serverFault: string | null;
}

export function initialView(): ViewState {
  return {
    connection: "connecting",
    hello: null,
    latest: null,
    prev: null,
    trails: [],
    errors: [],
    drag: null,
    advanced: false,
    targetWorld: [DEFAULT_TIP_TARGET[0], DEFAULT_TIP_TARGET[1]],
    pendingSendT: null,
    latencyMs: null,
    dropNoticeMs: null,
    serverFault: null,
  };
}

export function onOpen(view: ViewState): void {
  view.connection = "open";
  view.serverFault = null;
}

export function onClose(view: ViewState): void {
  view.connection = "closed";
}

export function onServerMessage(view: ViewState, msg: ServerMessage, nowMs: number): void {
  if (msg.kind === "hello") {
    view.hello = msg.payload;
    return;
  }
  if (msg.kind === "fault") {
    view.serverFault = msg.payload.message;
    return;
  }
  const last = view.latest;
  if (last !== null && msg.seq <= last.seq) return; // out of order, drop
  if (last !== null && msg.payload.step < last.state.step) {
    // The session restarted (reset): history from the old run is gone
    // and the host is steering back to its configured default target.
    view.trails = [];
    view.errors = [];
    view.targetWorld = [DEFAULT_TIP_TARGET[0], DEFAULT_TIP_TARGET[1]];
  }
  view.prev = last;
  view.latest = { state: msg.payload, seq: msg.seq, t: msg.t, arrivedMs: nowMs };
  if (view.pendingSendT !== null) {
    view.latencyMs = msg.t - view.pendingSendT;
    view.pendingSendT = null;
  }
  const stepAdvanced = last === null || msg.payload.step > last.state.step;
  if (stepAdvanced) {
    view.trails.push(msg.payload.nodes.map(([x, y]) => [x, y] as [number, number]));
    if (view.trails.length > TRAIL_CAP) view.trails.shift();
    view.errors.push({ step: msg.payload.step, mm: msg.payload.tip_error });
    if (view.errors.length > ERROR_CAP) view.errors.shift();
  }
}

/** Note a client frame going out, so the next state frame can close the loop. */
export function noteSend(view: ViewState, clientT: number): void {
  view.pendingSendT = clientT;
}

/** Mirror a target_update the console just sent. */
export function setLocalTarget(view: ViewState, x: number, y: number): void {
  view.targetWorld = [x, y];
}

export function noteDroppedSend(view: ViewState, nowMs: number): void {
  view.dropNoticeMs = nowMs;
}

export function isStale(view: ViewState, nowMs: number): boolean {
  return view.latest !== null && nowMs - view.latest.arrivedMs > STALE_AFTER_MS;
}

export function broadcastPeriodMs(view: ViewState): number {
  if (view.hello === null) return DEFAULT_PERIOD_MS;
  return (1000 / view.hello.tick_hz) * view.hello.broadcast_every;
}

function lerpAngle(a: number, b: number, s: number): number {
  let d = b - a;
  if (d > Math.PI) d -= 2 * Math.PI;
  if (d < -Math.PI) d += 2 * Math.PI;
  return a + s * d;
}

/** Backbone poses for drawing: latest, eased from the previous snapshot.
 *
 * The blend runs over one broadcast period after arrival and clamps at
 * the newest data — rendering never waits on the network.
 */
export function interpolatedNodes(view: ViewState, nowMs: number): [number, number, number][] | null {
  const cur = view.latest;
  if (cur === null) return null;
  const prev = view.prev;
  if (prev === null || prev.state.nodes.length !== cur.state.nodes.length) {
    return cur.state.nodes;
  }
  const s = Math.min(1, Math.max(0, (nowMs - cur.arrivedMs) / broadcastPeriodMs(view)));
  if (s >= 1) return cur.state.nodes;
  return cur.state.nodes.map(([x, y, phi], i) => {
    const [px, py, pphi] = prev.state.nodes[i];
    return [px + s * (x - px), py + s * (y - py), lerpAngle(pphi, phi, s)] as [number, number, number];
  });
}

/** Obstacle to draw: mid-drag the pointer leads, otherwise the server state. */
export function effectiveObstacle(view: ViewState): ObstacleShape | null {
  const fromState = view.latest?.state.obstacle ?? null;
  if (view.drag?.entity === "obstacle") {
    return { x: view.drag.x, y: view.drag.y, radius: fromState?.radius ?? 18 };
  }
  return fromState;
}
