/** Browser entry point: owns the DOM, the socket, and the frame loop.
 *
 * All behavior lives in the imported modules; this file only wires
 * pointer events into the coalescer, flushes it once per animation
 * frame, and paints whatever `render` returns.
 */

import { FrameCoalescer } from "./coalesce.js";
import { paint } from "./paint.js";
import { encodeClientMessage, parseServerMessage } from "./protocol.js";
import { render } from "./renderer.js";
import { ReconnectingSocket, WebSocketish } from "./socket.js";
import { makeViewport, toWorld } from "./transform.js";
import {
  initialView,
  noteDroppedSend,
  noteSend,
  onClose,
  onOpen,
  onServerMessage,
  setLocalTarget,
} from "./view_state.js";

const DEFAULT_PORT = 8731;
const DEFAULT_OBSTACLE_RADIUS = 18;

function socketUrl(): string {
  const params = new URL(location.href).searchParams;
  const explicit = params.get("ws");
  if (explicit) return explicit;
  const host = location.hostname || "127.0.0.1";
  return `ws://${host}:${params.get("port") ?? DEFAULT_PORT}`;
}

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const view = initialView();
const coalescer = new FrameCoalescer();

const socket = new ReconnectingSocket(
  () => new WebSocket(socketUrl()) as unknown as WebSocketish,
  {
    onOpen: () => onOpen(view),
    onClose: () => onClose(view),
    onMessage: (text) => {
      const msg = parseServerMessage(text);
      if (msg) onServerMessage(view, msg, performance.now());
    },
  },
);
socket.connect();

for (const action of ["start", "pause", "reset"] as const) {
  document.getElementById(`btn-${action}`)!.addEventListener("click", () => {
    coalescer.pushControl(action);
  });
}
const advancedBox = document.getElementById("advanced") as HTMLInputElement;
advancedBox.addEventListener("change", () => {
  view.advanced = advancedBox.checked;
});

function pointerWorld(ev: PointerEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  const vp = makeViewport(rect.width, rect.height);
  return toWorld(vp, ev.clientX - rect.left, ev.clientY - rect.top);
}

canvas.addEventListener("pointerdown", (ev) => {
  const [wx, wy] = pointerWorld(ev);
  const rect = canvas.getBoundingClientRect();
  const grabMm = 20 / makeViewport(rect.width, rect.height).scale;
  const ob = view.latest?.state.obstacle ?? null;
  const [tx, ty] = view.targetWorld;
  if (view.advanced && Math.hypot(wx - tx, wy - ty) < grabMm) {
    view.drag = { entity: "target", x: wx, y: wy };
  } else if (ob !== null && Math.hypot(wx - ob.x, wy - ob.y) < Math.max(ob.radius, grabMm)) {
    view.drag = { entity: "obstacle", x: wx, y: wy };
  } else {
    // Empty space: place the obstacle here and keep dragging it.
    view.drag = { entity: "obstacle", x: wx, y: wy };
    coalescer.setObstacle(wx, wy, ob?.radius ?? DEFAULT_OBSTACLE_RADIUS);
  }
  canvas.setPointerCapture(ev.pointerId);
});

canvas.addEventListener("pointermove", (ev) => {
  if (view.drag === null) return;
  const [wx, wy] = pointerWorld(ev);
  view.drag.x = wx;
  view.drag.y = wy;
  if (view.drag.entity === "obstacle") {
    const radius = view.latest?.state.obstacle?.radius ?? DEFAULT_OBSTACLE_RADIUS;
    coalescer.setObstacle(wx, wy, radius);
  } else {
    coalescer.setTarget(wx, wy);
  }
});

const endDrag = () => {
  view.drag = null;
};
canvas.addEventListener("pointerup", endDrag);
canvas.addEventListener("pointercancel", endDrag);

function fitCanvas(): void {
  const dpr = window.devicePixelRatio || 1;
  const w = canvas.clientWidth;
  const h = canvas.clientHeight;
  if (canvas.width !== w * dpr || canvas.height !== h * dpr) {
    canvas.width = w * dpr;
    canvas.height = h * dpr;
  }
  ctx.setTransform(dpr, 0, 0, dpr, 0, 0);
}

function frame(): void {
  const now = performance.now();
  for (const msg of coalescer.flush(Date.now())) {
    if (socket.trySend(encodeClientMessage(msg))) {
      noteSend(view, msg.t);
      if (msg.kind === "target_update") {
        setLocalTarget(view, msg.payload.x as number, msg.payload.y as number);
      }
    } else {
      noteDroppedSend(view, now);
    }
  }
  fitCanvas();
  paint(ctx, canvas.clientWidth, canvas.clientHeight, render(view, canvas.clientWidth, canvas.clientHeight, now));
  requestAnimationFrame(frame);
}

requestAnimationFrame(frame);
