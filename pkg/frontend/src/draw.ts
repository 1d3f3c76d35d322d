/**
 * Freehand path capture with point decimation and per-path undo.
 *
 * Pointer samples closer than `minSpacing` display pixels to the previous
 * kept point are dropped, so slow drawing does not flood the server with
 * near-duplicate points. DOM wiring lives in app.ts; this class is pure
 * state so it can be tested headlessly.
 */

import type { Point } from "./mapping.js";
import { MIN_PATH_POINTS } from "./tangents.js";

export class PathCapture {
  readonly minSpacing: number;
  paths: Point[][] = [];
  private active: Point[] | null = null;

  constructor(minSpacing = 3) {
    this.minSpacing = minSpacing;
  }

  begin(p: Point): void {
    this.active = [p];
  }

  extend(p: Point): boolean {
    if (!this.active) return false;
    const last = this.active[this.active.length - 1];
    if (Math.hypot(p.x - last.x, p.y - last.y) < this.minSpacing) {
      return false;
    }
    this.active.push(p);
    return true;
  }

  /** Finish the active path; drops fragments too short to ever submit. */
  end(): Point[] | null {
    const done = this.active;
    this.active = null;
    if (!done || done.length < 2) return null;
    this.paths.push(done);
    return done;
  }

  undo(): void {
    if (this.active) {
      this.active = null;
      return;
    }
    this.paths.pop();
  }

  clear(): void {
    this.paths = [];
    this.active = null;
  }

  get activePath(): Point[] | null {
    return this.active;
  }

  /** All finished paths long enough for the tangent formula. */
  submittable(): Point[][] {
    return this.paths.filter((p) => p.length >= MIN_PATH_POINTS);
  }

  /** True when there are paths but at least one is too short to send. */
  hasTooShortPath(): boolean {
    return this.paths.some((p) => p.length < MIN_PATH_POINTS);
  }
}
