import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";
import { parseServerMessage } from "../src/protocol.js";
import { render } from "../src/renderer.js";
import { initialView } from "../src/view_state.js";
import { onServerMessage } from "../src/view_state.js";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

function loadStream(name: string): string[] {
  return readFileSync(join(FIXTURES, name), "utf8").trim().split("\n");
}

/** Feed a recorded stream through the full client path and return the
 * final frame's drawing commands, on a deterministic clock. */
function finalFrame(lines: string[]) {
  const view = initialView();
  let clock = 0;
  for (const line of lines) {
    const msg = parseServerMessage(line);
    expect(msg).not.toBeNull();
    clock += 40;
    onServerMessage(view, msg!, clock);
  }
  return render(view, 1280, 820, clock + 40);
}

describe("record/replay", () => {
  it("fixture streams are in lockstep", () => {
    const live = loadStream("live_stream.ndjson");
    const replayed = loadStream("replayed_stream.ndjson");
    expect(live.length).toBe(replayed.length);
    expect(live.length).toBeGreaterThan(20);
  });

  it("a replayed session renders the identical final frame", () => {
    const liveFrame = finalFrame(loadStream("live_stream.ndjson"));
    const replayFrame = finalFrame(loadStream("replayed_stream.ndjson"));
    expect(liveFrame.length).toBeGreaterThan(10);
    expect(JSON.stringify(replayFrame)).toBe(JSON.stringify(liveFrame));
  });

  it("the session actually moved: obstacle present and steps advanced", () => {
    const lines = loadStream("live_stream.ndjson");
    const last = parseServerMessage(lines[lines.length - 1]);
    if (last?.kind !== "state") throw new Error("expected a state frame");
    expect(last.payload.step).toBeGreaterThan(50);
    expect(last.payload.obstacle).not.toBeNull();
    expect(last.payload.min_clearance).not.toBeNull();
  });
});
