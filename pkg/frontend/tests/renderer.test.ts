import { describe, expect, it } from "vitest";
import type { ServerMessage, StatePayload } from "../src/protocol.js";
import { DrawCmd, PHYSICS_END, arcPoints, betaColor, render } from "../src/renderer.js";
import { initialView, onServerMessage } from "../src/view_state.js";

function stateMsg(step: number, seq: number, extra: Partial<StatePayload> = {}): ServerMessage {
  return {
    kind: "state",
    seq,
    t: step * 40,
    payload: {
      step,
      q: Array(10).fill(100),
      nodes: [[0, 100, 0], [0, 200, 0], [0, 300, 0], [0, 400, 0], [0, 500, 0]],
      tip_error: 12,
      beta: Array.from({ length: 5 }, () => [0.8, 0.6, 0.9] as [number, number, number]),
      min_clearance: null,
      obstacle: null,
      paused: false,
      plan_failed: false,
      fault: null,
      ...extra,
    },
  };
}

const discs = (cmds: DrawCmd[]) => cmds.filter((c) => c.op === "disc");
const texts = (cmds: DrawCmd[]) => cmds.filter((c) => c.op === "text");

describe("render purity", () => {
  it("same state, same commands", () => {
    const v = initialView();
    onServerMessage(v, stateMsg(1, 0, { obstacle: { x: 90, y: 250, radius: 18 } }), 0);
    onServerMessage(v, stateMsg(2, 1), 40);
    const a = render(v, 1200, 800, 100);
    const b = render(v, 1200, 800, 100);
    expect(JSON.stringify(a)).toBe(JSON.stringify(b));
  });
});

describe("scene contents", () => {
  it("zero tip error puts the tip marker on the target", () => {
    const v = initialView(); // target defaults to (0, 500)
    onServerMessage(v, stateMsg(1, 0, { tip_error: 0 }), 0);
    const cmds = render(v, 1200, 800, 10);
    const tip = discs(cmds).find((c) => c.op === "disc" && c.r === 5)!;
    const targetRing = discs(cmds).find((c) => c.op === "disc" && c.r === 4.5)!;
    expect(tip.x).toBeCloseTo(targetRing.x, 9);
    expect(tip.y).toBeCloseTo(targetRing.y, 9);
  });

  it("an all-ones gate renders the analytic end of the scale uniformly", () => {
    const v = initialView();
    onServerMessage(v, stateMsg(1, 0, {
      beta: Array.from({ length: 5 }, () => [1, 1, 1] as [number, number, number]),
    }), 0);
    const cells = render(v, 1200, 800, 10).filter(
      (c): c is Extract<DrawCmd, { op: "rect" }> => c.op === "rect" && c.w === 15,
    );
    expect(cells).toHaveLength(15);
    const uniform = new Set(cells.map((c) => c.fill));
    expect(uniform.size).toBe(1);
    expect(uniform.has(`rgb(${PHYSICS_END.join(",")})`)).toBe(true);
    expect(betaColor(1)).toBe(`rgb(${PHYSICS_END.join(",")})`);
  });

  it("shows the stale banner once the stream goes quiet", () => {
    const v = initialView();
    onServerMessage(v, stateMsg(1, 0), 1000);
    const fresh = texts(render(v, 1200, 800, 1100));
    const stale = texts(render(v, 1200, 800, 1700));
    const staleText = (cmds: typeof fresh) => cmds.some((c) => c.op === "text" && /stale/.test(c.text));
    expect(staleText(fresh)).toBe(false);
    expect(staleText(stale)).toBe(true);
  });

  it("round trip reads dash until a loopback value exists, then shows it", () => {
    const v = initialView();
    onServerMessage(v, stateMsg(1, 0), 0);
    const before = texts(render(v, 1200, 800, 10));
    expect(before.some((c) => c.op === "text" && c.text === "round trip —")).toBe(true);
    v.latencyMs = 35;
    const after = texts(render(v, 1200, 800, 10));
    expect(after.some((c) => c.op === "text" && c.text === "round trip 35 ms")).toBe(true);
  });

  it("draws obstacle disc plus influence ring when present", () => {
    const v = initialView();
    onServerMessage(v, stateMsg(1, 0, { obstacle: { x: 90, y: 250, radius: 20 } }), 0);
    const ds = discs(render(v, 1200, 800, 10)).filter((c) => c.op === "disc" && c.dash);
    expect(ds.length).toBeGreaterThanOrEqual(1); // dashed influence ring
  });
});

describe("arc sampling", () => {
  // Oracle values from the robot model: one segment, turn 0.3, length 100.
  const END = [14.88783696, 98.50673555] as const;
  const MID = [3.74297402, 49.81271082] as const;

  it("ends exactly on the far node", () => {
    const pts = arcPoints(0, 0, 0, END[0], END[1], 0.3, 14);
    const last = pts[pts.length - 1];
    expect(last[0]).toBeCloseTo(END[0], 12);
    expect(last[1]).toBeCloseTo(END[1], 12);
  });

  it("passes through the model's arc midpoint", () => {
    const pts = arcPoints(0, 0, 0, END[0], END[1], 0.3, 14);
    const mid = pts[6]; // 7/14 of the turn
    expect(mid[0]).toBeCloseTo(MID[0], 6);
    expect(mid[1]).toBeCloseTo(MID[1], 6);
  });

  it("mirrors for a negative turn", () => {
    const pts = arcPoints(0, 0, 0, -END[0], END[1], -0.3, 14);
    const mid = pts[6];
    expect(mid[0]).toBeCloseTo(-MID[0], 6);
    expect(mid[1]).toBeCloseTo(MID[1], 6);
  });

  it("degenerates to a straight line for tiny turns", () => {
    const pts = arcPoints(0, 0, 0, 0, 100, 0, 10);
    expect(pts).toHaveLength(10);
    expect(pts[4]).toEqual([0, 50]);
    expect(pts[9]).toEqual([0, 100]);
  });
});
