import { describe, expect, it } from "vitest";
import { FrameCoalescer } from "../src/coalesce.js";

describe("FrameCoalescer", () => {
  it("collapses 100 pointer moves into exactly one obstacle update", () => {
    const c = new FrameCoalescer();
    for (let i = 0; i < 100; i++) c.setObstacle(i, 250, 18);
    const out = c.flush(1000);
    expect(out).toHaveLength(1);
    expect(out[0].kind).toBe("obstacle_update");
    expect(out[0].payload).toEqual({ x: 99, y: 250, radius: 18 });
  });

  it("collapses a 10-move drag the same way", () => {
    const c = new FrameCoalescer();
    for (let i = 0; i < 10; i++) c.setObstacle(100 + i, 200, 18);
    expect(c.flush(0)).toHaveLength(1);
  });

  it("keeps discrete control presses in order, ahead of drags", () => {
    const c = new FrameCoalescer();
    c.setObstacle(50, 250, 18);
    c.pushControl("pause");
    c.pushControl("reset");
    const out = c.flush(5);
    expect(out.map((m) => m.kind)).toEqual([
      "session_control",
      "session_control",
      "obstacle_update",
    ]);
    expect(out[0].payload.action).toBe("pause");
    expect(out[1].payload.action).toBe("reset");
  });

  it("coalesces target moves independently of the obstacle", () => {
    const c = new FrameCoalescer();
    c.setTarget(10, 480);
    c.setTarget(20, 470);
    c.setObstacle(90, 240, 18);
    const out = c.flush(0);
    expect(out.map((m) => m.kind)).toEqual(["obstacle_update", "target_update"]);
    expect(out[1].payload).toEqual({ x: 20, y: 470 });
  });

  it("flush drains everything", () => {
    const c = new FrameCoalescer();
    c.setObstacle(1, 2, 3);
    c.pushControl("start");
    expect(c.pending).toBe(2);
    c.flush(0);
    expect(c.pending).toBe(0);
    expect(c.flush(1)).toEqual([]);
  });

  it("stamps every flushed frame with the given time", () => {
    const c = new FrameCoalescer();
    c.pushControl("start");
    c.setObstacle(1, 2, 3);
    for (const msg of c.flush(4242)) expect(msg.t).toBe(4242);
  });
});
