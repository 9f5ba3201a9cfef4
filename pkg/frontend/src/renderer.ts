/** Scene construction.
 *
 * `render` turns a ViewState into a flat list of drawing commands in
 * screen coordinates — no canvas handle, no clocks other than the
 * `nowMs` argument, no globals.  The same state always yields the
 * same commands, which is what the replay tests lean on; `paint`
 * (separate module) is the only code that touches a real 2-D context.
 */

import type { ObstacleShape, StatePayload } from "./protocol.js";
import { makeViewport, toScreen, Viewport } from "./transform.js";
import {
  ViewState,
  effectiveObstacle,
  interpolatedNodes,
  isStale,
} from "./view_state.js";

export type DrawCmd =
  | { op: "clear"; color: string }
  | { op: "poly"; pts: [number, number][]; color: string; width: number; alpha?: number; dash?: number[] }
  | { op: "disc"; x: number; y: number; r: number; fill?: string; stroke?: string; width?: number; alpha?: number; dash?: number[] }
  | { op: "rect"; x: number; y: number; w: number; h: number; fill?: string; stroke?: string; width?: number; alpha?: number }
  | { op: "text"; x: number; y: number; text: string; color: string; size: number; align?: "left" | "center" | "right" };

const BG = "#10151c";
const GRID = "#1a222c";
const BACKBONE = "#d9e4f3";
const NODE = "#9fb4d0";
const BASE = "#5f7390";
const TIP_GOOD = "#7ee0a3";
const TARGET = "#f2c94c";
const OBSTACLE_FILL = "#b8453f";
const OBSTACLE_RING = "#d4827d";
const HUD = "#c2cfdf";
const BANNER_BG = "#3a2328";
const BANNER_FG = "#f1b9b4";
const CHART_BG = "#141b24";
const CHART_LINE = "#6fb3e0";

/** Ends of the gate color scale: full model trust in the analytic side
 * renders the first color, full trust in the learned side the second. */
export const PHYSICS_END: [number, number, number] = [56, 132, 244];
export const NET_END: [number, number, number] = [240, 158, 36];

/** Ring drawn around the obstacle at the planner's default influence
 * multiple, as a visual affordance for where avoidance kicks in. */
const INFLUENCE_DISPLAY_FACTOR = 2.0;

const ARC_SAMPLES = 14;
const TRAIL_DISC_STRIDE = 6;

export function betaColor(b: number): string {
  const s = Math.min(1, Math.max(0, b));
  const mix = (i: number) => Math.round(NET_END[i] + s * (PHYSICS_END[i] - NET_END[i]));
  return `rgb(${mix(0)},${mix(1)},${mix(2)})`;
}

/** Sample a constant-curvature arc from pose (x0, y0, heading phi0) to
 * its far end (x1, y1), turning through dphi.
 *
 * Matches the robot model's segment shape: heading 0 points along
 * world +y, and a segment turning through dphi bulges toward the side
 * the turn names — its circle center sits at sign(dphi) * R along
 * (cos phi0, sin phi0), with the radial vector sweeping -s * dphi.
 * Returns `n` points ending exactly at (x1, y1), the start point
 * excluded so consecutive segments chain without duplicates.
 */
export function arcPoints(
  x0: number, y0: number, phi0: number,
  x1: number, y1: number, dphi: number,
  n: number = ARC_SAMPLES,
): [number, number][] {
  const out: [number, number][] = [];
  const cx = x1 - x0;
  const cy = y1 - y0;
  const chord = Math.hypot(cx, cy);
  if (Math.abs(dphi) < 1e-4 || chord < 1e-9) {
    for (let i = 1; i <= n; i++) out.push([x0 + (i / n) * cx, y0 + (i / n) * cy]);
    return out;
  }
  const r = chord / (2 * Math.sin(Math.abs(dphi) / 2));
  const side = Math.sign(dphi);
  const ox = x0 + side * r * Math.cos(phi0);
  const oy = y0 + side * r * Math.sin(phi0);
  const dx = x0 - ox;
  const dy = y0 - oy;
  for (let i = 1; i < n; i++) {
    const a = -(i / n) * dphi;
    const c = Math.cos(a);
    const s = Math.sin(a);
    out.push([ox + c * dx - s * dy, oy + s * dx + c * dy]);
  }
  out.push([x1, y1]);
  return out;
}

/** Screen-space path through the whole backbone: base then every arc. */
export function backbonePath(vp: Viewport, nodes: [number, number, number][]): [number, number][] {
  const pts: [number, number][] = [toScreen(vp, 0, 0)];
  let px = 0;
  let py = 0;
  let pphi = 0;
  for (const [x, y, phi] of nodes) {
    for (const [wx, wy] of arcPoints(px, py, pphi, x, y, phi - pphi)) {
      pts.push(toScreen(vp, wx, wy));
    }
    px = x;
    py = y;
    pphi = phi;
  }
  return pts;
}

function grid(vp: Viewport, cmds: DrawCmd[]): void {
  for (let x = -600; x <= 600; x += 100) {
    cmds.push({ op: "poly", pts: [toScreen(vp, x, -40), toScreen(vp, x, 640)], color: GRID, width: 1 });
  }
  for (let y = 0; y <= 600; y += 100) {
    cmds.push({ op: "poly", pts: [toScreen(vp, -600, y), toScreen(vp, 600, y)], color: GRID, width: 1 });
  }
}

function obstacle(vp: Viewport, ob: ObstacleShape, cmds: DrawCmd[]): void {
  const [sx, sy] = toScreen(vp, ob.x, ob.y);
  const r = ob.radius * vp.scale;
  cmds.push({
    op: "disc", x: sx, y: sy, r: r * INFLUENCE_DISPLAY_FACTOR,
    stroke: OBSTACLE_RING, width: 1, alpha: 0.7, dash: [4, 4],
  });
  cmds.push({ op: "disc", x: sx, y: sy, r, fill: OBSTACLE_FILL, stroke: OBSTACLE_RING, width: 1.5 });
}

function trails(vp: Viewport, view: ViewState, cmds: DrawCmd[]): void {
  const hist = view.trails;
  if (hist.length < 2) return;
  const nNodes = hist[0].length;
  for (let j = 0; j < nNodes; j++) {
    const pts = hist.map((entry) => toScreen(vp, entry[j][0], entry[j][1]));
    cmds.push({ op: "poly", pts, color: NODE, width: 1, alpha: 0.16 });
  }
  for (let k = 0; k < hist.length; k += TRAIL_DISC_STRIDE) {
    const age = k / hist.length;
    for (let j = 0; j < nNodes; j++) {
      const [sx, sy] = toScreen(vp, hist[k][j][0], hist[k][j][1]);
      cmds.push({ op: "disc", x: sx, y: sy, r: 1.5, fill: NODE, alpha: 0.05 + 0.25 * age });
    }
  }
}

function backbone(vp: Viewport, view: ViewState, state: StatePayload, nowMs: number, cmds: DrawCmd[]): void {
  const nodes = interpolatedNodes(view, nowMs) ?? state.nodes;
  cmds.push({ op: "poly", pts: backbonePath(vp, nodes), color: BACKBONE, width: 3.5 });
  const [bx, by] = toScreen(vp, 0, 0);
  cmds.push({ op: "disc", x: bx, y: by, r: 6, fill: BASE });
  for (let i = 0; i < nodes.length; i++) {
    const [sx, sy] = toScreen(vp, nodes[i][0], nodes[i][1]);
    const tip = i === nodes.length - 1;
    cmds.push({
      op: "disc", x: sx, y: sy, r: tip ? 5 : 4,
      fill: tip && state.tip_error < 3 ? TIP_GOOD : NODE,
    });
  }
}

function targetMarker(vp: Viewport, view: ViewState, cmds: DrawCmd[]): void {
  const target = view.drag?.entity === "target" ? [view.drag.x, view.drag.y] : view.targetWorld;
  const [sx, sy] = toScreen(vp, target[0], target[1]);
  const a = 7;
  cmds.push({ op: "poly", pts: [[sx - a, sy], [sx + a, sy]], color: TARGET, width: 1.5 });
  cmds.push({ op: "poly", pts: [[sx, sy - a], [sx, sy + a]], color: TARGET, width: 1.5 });
  cmds.push({ op: "disc", x: sx, y: sy, r: 4.5, stroke: TARGET, width: 1.5 });
  if (view.advanced) {
    cmds.push({ op: "disc", x: sx, y: sy, r: 11, stroke: TARGET, width: 1, alpha: 0.5, dash: [3, 3] });
  }
}

function betaStrip(view: ViewState, h: number, cmds: DrawCmd[]): void {
  const beta = view.latest?.state.beta;
  if (!beta) return;
  const cell = 16;
  const rows = 3;
  const x0 = 12;
  const y0 = h - 14 - rows * cell;
  cmds.push({ op: "text", x: x0, y: y0 - 18, text: "model trust per segment", color: HUD, size: 11 });
  cmds.push({
    op: "text", x: x0, y: y0 - 6,
    text: "analytic", color: `rgb(${PHYSICS_END.join(",")})`, size: 10,
  });
  cmds.push({
    op: "text", x: x0 + 52, y: y0 - 6,
    text: "learned", color: `rgb(${NET_END.join(",")})`, size: 10,
  });
  const labels = ["x", "y", "hdg"];
  for (let r = 0; r < rows; r++) {
    cmds.push({
      op: "text", x: x0 + beta.length * cell + 6, y: y0 + r * cell + 12,
      text: labels[r], color: HUD, size: 10,
    });
    for (let s = 0; s < beta.length; s++) {
      cmds.push({
        op: "rect", x: x0 + s * cell, y: y0 + r * cell, w: cell - 1, h: cell - 1,
        fill: betaColor(beta[s][r]),
      });
    }
  }
}

function errorChart(view: ViewState, w: number, h: number, cmds: DrawCmd[]): void {
  const cw = 250;
  const ch = 96;
  const x0 = w - cw - 12;
  const y0 = h - ch - 12;
  cmds.push({ op: "rect", x: x0, y: y0, w: cw, h: ch, fill: CHART_BG, stroke: GRID, width: 1 });
  cmds.push({ op: "text", x: x0 + 6, y: y0 + 14, text: "tip error (mm)", color: HUD, size: 11 });
  const hist = view.errors;
  if (hist.length < 2) return;
  const peak = Math.max(20, ...hist.map((e) => e.mm));
  const pts: [number, number][] = hist.map((e, i) => [
    x0 + 6 + (i / (hist.length - 1)) * (cw - 12),
    y0 + ch - 6 - (e.mm / peak) * (ch - 28),
  ]);
  cmds.push({ op: "poly", pts, color: CHART_LINE, width: 1.5 });
  const last = hist[hist.length - 1];
  cmds.push({
    op: "text", x: x0 + cw - 6, y: y0 + 14, align: "right",
    text: `${last.mm.toFixed(1)} @ ${last.step}`, color: CHART_LINE, size: 11,
  });
}

function banner(text: string, w: number, row: number, cmds: DrawCmd[]): void {
  const y = 10 + row * 30;
  cmds.push({ op: "rect", x: w / 2 - 150, y, w: 300, h: 24, fill: BANNER_BG, stroke: BANNER_FG, width: 1 });
  cmds.push({ op: "text", x: w / 2, y: y + 16, text, color: BANNER_FG, size: 12, align: "center" });
}

function hud(view: ViewState, state: StatePayload | null, nowMs: number, w: number, cmds: DrawCmd[]): void {
  const dot = { connecting: "#d9b44a", open: "#69c97e", closed: "#d4655f" }[view.connection];
  cmds.push({ op: "disc", x: 18, y: 18, r: 5, fill: dot });
  cmds.push({ op: "text", x: 30, y: 22, text: view.connection, color: HUD, size: 12 });
  const lines: string[] = [];
  if (state) {
    lines.push(`step ${state.step}`);
    lines.push(`tip error ${state.tip_error.toFixed(1)} mm`);
    lines.push(
      state.min_clearance === null ? "clearance —" : `clearance ${state.min_clearance.toFixed(1)} mm`,
    );
  }
  // Server timestamps are logical tick times; against a wall-clock send
  // stamp the difference only means something when the two share a clock
  // (as the loopback tests do), so out-of-band values display as blank.
  const rt =
    view.latencyMs !== null && Math.abs(view.latencyMs) < 600_000
      ? `round trip ${view.latencyMs} ms`
      : "round trip —";
  lines.push(rt);
  lines.forEach((text, i) => {
    cmds.push({ op: "text", x: 14, y: 44 + i * 17, text, color: HUD, size: 12 });
  });

  let row = 0;
  if (isStale(view, nowMs)) banner("stale data — stream silent", w, row++, cmds);
  if (view.connection === "closed") banner("disconnected — retrying", w, row++, cmds);
  if (state?.paused) banner("paused", w, row++, cmds);
  if (state?.plan_failed) banner("no clear shape found — holding last plan", w, row++, cmds);
  if (state?.fault) banner(`controller fault: ${state.fault}`, w, row++, cmds);
  if (view.serverFault) banner(`rejected input: ${view.serverFault}`, w, row++, cmds);
  if (view.dropNoticeMs !== null && nowMs - view.dropNoticeMs < 1500) {
    banner("input dropped while offline", w, row++, cmds);
  }
}

export function render(view: ViewState, w: number, h: number, nowMs: number): DrawCmd[] {
  const vp = makeViewport(w, h);
  const cmds: DrawCmd[] = [{ op: "clear", color: BG }];
  grid(vp, cmds);
  const state = view.latest?.state ?? null;
  const ob = effectiveObstacle(view);
  if (ob) obstacle(vp, ob, cmds);
  trails(vp, view, cmds);
  if (state) backbone(vp, view, state, nowMs, cmds);
  targetMarker(vp, view, cmds);
  betaStrip(view, h, cmds);
  errorChart(view, w, h, cmds);
  hud(view, state, nowMs, w, cmds);
  return cmds;
}
