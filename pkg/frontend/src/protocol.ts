/** Wire protocol spoken with the live session host.
 *
 * Every frame is one JSON object.  Server frames carry
 * `{kind, seq, t, payload}`; client frames carry `{kind, t, payload}`
 * where `t` is the client's send timestamp in epoch milliseconds.
 *
 * The console emits exactly three kinds — obstacle_update,
 * target_update, session_control — and the builders below are the only
 * place client frames are constructed, so nothing else can leak onto
 * the wire.
 */

export const CLIENT_KINDS = ["obstacle_update", "target_update", "session_control"] as const;
export type ClientKind = (typeof CLIENT_KINDS)[number];
export type SessionAction = "start" | "pause" | "reset";

export interface HelloPayload {
  schema_version: number;
  n_segments: number;
  tick_hz: number;
  broadcast_every: number;
}

export interface ObstacleShape {
  x: number;
  y: number;
  radius: number;
}

export interface StatePayload {
  step: number;
  q: number[];
  /** One row per segment end, proximal to tip: [x, y, heading]. */
  nodes: [number, number, number][];
  tip_error: number;
  /** One row per segment: trust gate for the x, y, heading channels. */
  beta: [number, number, number][];
  min_clearance: number | null;
  obstacle: ObstacleShape | null;
  paused: boolean;
  plan_failed: boolean;
  fault: string | null;
}

export interface FaultPayload {
  message: string;
}

export type ServerMessage =
  | { kind: "hello"; seq: number; t: number; payload: HelloPayload }
  | { kind: "state"; seq: number; t: number; payload: StatePayload }
  | { kind: "fault"; seq: number; t: number; payload: FaultPayload };

export interface ClientMessage {
  kind: ClientKind;
  t: number;
  payload: Record<string, number | string>;
}

const isNum = (v: unknown): v is number => typeof v === "number" && Number.isFinite(v);

function isPose(row: unknown): row is [number, number, number] {
  return Array.isArray(row) && row.length === 3 && row.every(isNum);
}

/** Parse one inbound frame; null for anything malformed or unknown.
 *
 * Validation is defensive rather than exhaustive: the renderer must
 * never see NaN coordinates, so every number that reaches the canvas
 * is checked here.
 */
export function parseServerMessage(text: string): ServerMessage | null {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null) return null;
  const msg = raw as { kind?: unknown; seq?: unknown; t?: unknown; payload?: unknown };
  if (!isNum(msg.seq) || !isNum(msg.t)) return null;
  const p = msg.payload as Record<string, unknown> | undefined;
  if (typeof p !== "object" || p === null) return null;

  if (msg.kind === "hello") {
    if (!isNum(p.schema_version) || !isNum(p.n_segments)) return null;
    if (!isNum(p.tick_hz) || !isNum(p.broadcast_every)) return null;
    return { kind: "hello", seq: msg.seq, t: msg.t, payload: p as unknown as HelloPayload };
  }
  if (msg.kind === "fault") {
    if (typeof p.message !== "string") return null;
    return { kind: "fault", seq: msg.seq, t: msg.t, payload: { message: p.message } };
  }
  if (msg.kind !== "state") return null;

  if (!isNum(p.step) || !isNum(p.tip_error)) return null;
  if (!Array.isArray(p.q) || !p.q.every(isNum)) return null;
  if (!Array.isArray(p.nodes) || !p.nodes.every(isPose)) return null;
  if (!Array.isArray(p.beta) || !p.beta.every(isPose)) return null;
  if (p.min_clearance !== null && !isNum(p.min_clearance)) return null;
  if (p.obstacle !== null) {
    const o = p.obstacle as Record<string, unknown>;
    if (typeof o !== "object" || o === null) return null;
    if (!isNum(o.x) || !isNum(o.y) || !isNum(o.radius)) return null;
  }
  if (typeof p.paused !== "boolean" || typeof p.plan_failed !== "boolean") return null;
  if (p.fault !== null && typeof p.fault !== "string") return null;
  return { kind: "state", seq: msg.seq, t: msg.t, payload: p as unknown as StatePayload };
}

export function obstacleUpdate(x: number, y: number, radius: number, t: number): ClientMessage {
  return { kind: "obstacle_update", t, payload: { x, y, radius } };
}

export function targetUpdate(x: number, y: number, t: number): ClientMessage {
  return { kind: "target_update", t, payload: { x, y } };
}

export function sessionControl(action: SessionAction, t: number): ClientMessage {
  return { kind: "session_control", t, payload: { action } };
}

/** Serialize a client frame, refusing any kind outside the declared three. */
export function encodeClientMessage(msg: ClientMessage): string {
  if (!CLIENT_KINDS.includes(msg.kind)) {
    throw new Error(`client may not emit kind ${JSON.stringify(msg.kind)}`);
  }
  return JSON.stringify({ kind: msg.kind, t: msg.t, payload: msg.payload });
}
