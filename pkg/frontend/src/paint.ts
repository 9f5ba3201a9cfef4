/** Execute drawing commands on a real 2-D context.  The one module
 * that touches the canvas API; everything above it is plain data. */

import type { DrawCmd } from "./renderer.js";

export function paint(ctx: CanvasRenderingContext2D, w: number, h: number, cmds: DrawCmd[]): void {
  for (const cmd of cmds) {
    ctx.save();
    if ("alpha" in cmd && cmd.alpha !== undefined) ctx.globalAlpha = cmd.alpha;
    switch (cmd.op) {
      case "clear":
        ctx.fillStyle = cmd.color;
        ctx.fillRect(0, 0, w, h);
        break;
      case "poly":
        ctx.strokeStyle = cmd.color;
        ctx.lineWidth = cmd.width;
        if (cmd.dash) ctx.setLineDash(cmd.dash);
        ctx.lineJoin = "round";
        ctx.beginPath();
        cmd.pts.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
        ctx.stroke();
        break;
      case "disc":
        ctx.beginPath();
        ctx.arc(cmd.x, cmd.y, cmd.r, 0, 2 * Math.PI);
        if (cmd.fill) {
          ctx.fillStyle = cmd.fill;
          ctx.fill();
        }
        if (cmd.stroke) {
          ctx.strokeStyle = cmd.stroke;
          ctx.lineWidth = cmd.width ?? 1;
          if (cmd.dash) ctx.setLineDash(cmd.dash);
          ctx.stroke();
        }
        break;
      case "rect":
        if (cmd.fill) {
          ctx.fillStyle = cmd.fill;
          ctx.fillRect(cmd.x, cmd.y, cmd.w, cmd.h);
        }
        if (cmd.stroke) {
          ctx.strokeStyle = cmd.stroke;
          ctx.lineWidth = cmd.width ?? 1;
          ctx.strokeRect(cmd.x, cmd.y, cmd.w, cmd.h);
        }
        break;
      case "text":
        ctx.fillStyle = cmd.color;
        ctx.font = `${cmd.size}px system-ui, sans-serif`;
        ctx.textAlign = cmd.align ?? "left";
        ctx.textBaseline = "alphabetic";
        ctx.fillText(cmd.text, cmd.x, cmd.y);
        break;
    }
    ctx.restore();
  }
}
