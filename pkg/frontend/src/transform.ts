/** World-to-screen mapping.
 *
 * World coordinates are millimeters with the robot base at the origin
 * and +y pointing up; the screen keeps the base fixed at lower-center.
 * One uniform scale serves both axes so circles stay circles.
 */

export interface Viewport {
  w: number;
  h: number;
  scale: number;
}

/** Visible world window (mm): symmetric in x, a little margin below the base. */
export const X_HALF = 620;
export const Y_MIN = -60;
export const Y_MAX = 660;

export function makeViewport(w: number, h: number): Viewport {
  const scale = Math.min(w / (2 * X_HALF), h / (Y_MAX - Y_MIN));
  return { w, h, scale };
}

export function toScreen(vp: Viewport, wx: number, wy: number): [number, number] {
  return [vp.w / 2 + wx * vp.scale, vp.h - (wy - Y_MIN) * vp.scale];
}

export function toWorld(vp: Viewport, sx: number, sy: number): [number, number] {
  return [(sx - vp.w / 2) / vp.scale, (vp.h - sy) / vp.scale + Y_MIN];
}
