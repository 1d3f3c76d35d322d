/**
 * Client-side tangent evaluation for drawn polylines.
 *
 * For point i, the raw tangent is the mean of the next `window` points
 * minus the point itself, normalized to unit length; the trailing `window`
 * points carry no tangent. This mirrors the server's formula so tests can
 * verify the echo, but the overlay always renders the server's numbers.
 */

import type { ImagePoint } from "./mapping.js";

export const TANGENT_WINDOW = 3;

/** Minimum points a path needs before it can be submitted. */
export const MIN_PATH_POINTS = TANGENT_WINDOW + 1;

export function pathTangents(
  points: ImagePoint[],
  window: number = TANGENT_WINDOW,
): ImagePoint[] {
  const m = points.length;
  if (m <= window) {
    throw new Error(`path needs at least ${window + 1} points, got ${m}`);
  }
  const out: ImagePoint[] = [];
  for (let i = 0; i < m - window; i++) {
    let ay = 0;
    let ax = 0;
    for (let j = 1; j <= window; j++) {
      ay += points[i + j][0];
      ax += points[i + j][1];
    }
    const vy = ay / window - points[i][0];
    const vx = ax / window - points[i][1];
    const norm = Math.hypot(vy, vx);
    if (norm === 0) {
      throw new Error("degenerate tangent: coincident path points");
    }
    out.push([vy / norm, vx / norm]);
  }
  return out;
}
