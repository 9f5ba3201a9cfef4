/** Per-frame input coalescing.
 *
 * Pointer moves arrive far faster than the animation loop runs; only
 * the newest obstacle (and target) position matters, so continuous
 * updates collapse to at most one frame each per flush.  Discrete
 * button presses are queued verbatim — a pause must not swallow a
 * reset — and flush ahead of the coalesced drags.
 */

import type { ClientMessage, SessionAction } from "./protocol.js";
import { obstacleUpdate, sessionControl, targetUpdate } from "./protocol.js";

export class FrameCoalescer {
  private obstacle: { x: number; y: number; radius: number } | null = null;
  private target: { x: number; y: number } | null = null;
  private controls: SessionAction[] = [];

  setObstacle(x: number, y: number, radius: number): void {
    this.obstacle = { x, y, radius };
  }

  setTarget(x: number, y: number): void {
    this.target = { x, y };
  }

  pushControl(action: SessionAction): void {
    this.controls.push(action);
  }

  get pending(): number {
    return this.controls.length + (this.obstacle ? 1 : 0) + (this.target ? 1 : 0);
  }

  /** Drain everything collected since the last flush, stamped with `t`. */
  flush(t: number): ClientMessage[] {
    const out: ClientMessage[] = this.controls.map((a) => sessionControl(a, t));
    if (this.obstacle !== null) {
      out.push(obstacleUpdate(this.obstacle.x, this.obstacle.y, this.obstacle.radius, t));
    }
    if (this.target !== null) {
      out.push(targetUpdate(this.target.x, this.target.y, t));
    }
    this.controls = [];
    this.obstacle = null;
    this.target = null;
    return out;
  }
}
