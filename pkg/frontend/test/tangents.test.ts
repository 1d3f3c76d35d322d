import { describe, expect, it } from "vitest";

import { pathTangents, MIN_PATH_POINTS } from "../src/tangents.js";
import type { ImagePoint } from "../src/mapping.js";

describe("pathTangents", () => {
  it("straight line along +x gives constant unit tangents", () => {
    const pts: ImagePoint[] = [];
    for (let i = 0; i < 8; i++) pts.push([16, 2 * i]);
    const tangents = pathTangents(pts);
    expect(tangents).toHaveLength(8 - 3);
    for (const [ty, tx] of tangents) {
      expect(ty).toBeCloseTo(0, 12);
      expect(tx).toBeCloseTo(1, 12);
    }
  });

  it("normalizes to unit length", () => {
    const pts: ImagePoint[] = [
      [0, 0], [3, 1], [5, 4], [6, 8], [6, 13], [5, 19],
    ];
    for (const [ty, tx] of pathTangents(pts)) {
      expect(Math.hypot(ty, tx)).toBeCloseTo(1, 12);
    }
  });

  it("window average matches a hand-evaluated corner", () => {
    // Turn from +x to +y; with window 3 the first tangent is the
    // normalized mean of points 1..3 minus point 0.
    const pts: ImagePoint[] = [[0, 0], [0, 2], [0, 4], [2, 4], [4, 4]];
    const [first] = pathTangents(pts);
    const mean: ImagePoint = [(0 + 0 + 2) / 3, (2 + 4 + 4) / 3];
    const norm = Math.hypot(mean[0], mean[1]);
    expect(first[0]).toBeCloseTo(mean[0] / norm, 12);
    expect(first[1]).toBeCloseTo(mean[1] / norm, 12);
  });

  it("rejects too-short paths, matching the submit gate", () => {
    const pts: ImagePoint[] = [[0, 0], [1, 1], [2, 2]];
    expect(pts.length).toBeLessThan(MIN_PATH_POINTS);
    expect(() => pathTangents(pts)).toThrow(/at least 4 points/);
  });

  it("rejects coincident points", () => {
    const pts: ImagePoint[] = [[1, 1], [1, 1], [1, 1], [1, 1], [1, 1]];
    expect(() => pathTangents(pts)).toThrow(/degenerate/);
  });
});
