/**
 * Live round trip against the real job service: spawns `brushfit serve`,
 * submits a job, steers it with a drawn path, and watches the progress
 * stream. Verifies the server's tangent echo against the independent
 * client-side formula and the preview cadence during a live job.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { BrushfitClient } from "../src/api.js";
import { PathCapture } from "../src/draw.js";
import { displayToImage, type ViewMapping } from "../src/mapping.js";
import { pathTangents } from "../src/tangents.js";
import type { ImagePoint } from "../src/mapping.js";

const PORT = 8765 + Math.floor(Math.random() * 500);
const BASE = `http://127.0.0.1:${PORT}`;
const PYTHON = process.env.BRUSHFIT_PYTHON ?? "python3";

let server: ChildProcess;

function ppmBytes(h: number, w: number): Blob {
  // Deterministic little gradient image, assembled by hand as binary PPM.
  const header = new TextEncoder().encode(`P6\n${w} ${h}\n255\n`);
  const raster = new Uint8Array(h * w * 3);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const i = (y * w + x) * 3;
      raster[i] = Math.floor((255 * x) / (w - 1));
      raster[i + 1] = Math.floor((255 * y) / (h - 1));
      raster[i + 2] = (x + y) % 2 === 0 ? 40 : 200;
    }
  }
  const bytes = new Uint8Array(header.length + raster.length);
  bytes.set(header);
  bytes.set(raster, header.length);
  return new Blob([bytes], { type: "image/x-portable-pixmap" });
}

async function waitForServer(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/jobs/warmup-probe/status`);
      if (resp.status === 404) return; // routes are up
    } catch {
      /* not listening yet */
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  throw new Error("service did not come up");
}

async function waitForStatus(
  client: BrushfitClient,
  jobId: string,
  want: string[],
  timeoutMs = 60000,
): Promise<string> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const status = await client.status(jobId);
    if (want.includes(status.status)) return status.status;
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error(`job never reached ${want}`);
}

/** Minimal SSE reader over fetch streaming (node has no EventSource). */
async function readEvents(
  url: string,
  timeoutMs = 60000,
): Promise<{ steps: number[]; previews: string[] }> {
  const controller = new AbortController();
  const timer = setTimeout(() => controller.abort(), timeoutMs);
  const steps: number[] = [];
  const previews: string[] = [];
  try {
    const resp = await fetch(url, { signal: controller.signal });
    expect(resp.headers.get("content-type")).toContain("text/event-stream");
    const reader = resp.body!.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { value, done } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let sep;
      let finished = false;
      while ((sep = buffer.indexOf("\n\n")) >= 0) {
        const frame = buffer.slice(0, sep);
        buffer = buffer.slice(sep + 2);
        if (frame.startsWith("event: done")) {
          finished = true;
          break;
        }
        for (const line of frame.split("\n")) {
          if (!line.startsWith("data:")) continue;
          const payload = JSON.parse(line.slice(5));
          if (typeof payload.step === "number") {
            steps.push(payload.step);
            previews.push(payload.preview);
          }
        }
      }
      if (finished) break;
    }
  } finally {
    clearTimeout(timer);
    controller.abort();
  }
  return { steps, previews };
}

beforeAll(async () => {
  server = spawn(PYTHON, ["-m", "brushfit.cli", "serve", "--port",
                          String(PORT), "--host", "127.0.0.1"],
                 { stdio: "ignore" });
  await waitForServer();
}, 40000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("live service round trip", () => {
  it("echoes tangents matching the client-side formula within 1e-6 and "
     + "streams at least one frame per 25 steps", async () => {
    const client = new BrushfitClient(BASE);
    const jobId = await client.createJob(ppmBytes(24, 24), null, {
      stroke_steps: 60,
      pixel_steps: 0,
      n_strokes: 6,
      preview_every: 25,
      seed: 4,
      canvas: { height: 24, width: 24 },
      init: { method: "random" },
    });
    expect(jobId).toMatch(/^[0-9a-f]+$/);

    // Path round trip through the real UI pipeline: pointer samples are
    // decimated by PathCapture, mapped from display to canvas coordinates,
    // and the echo is compared with an independent evaluation of the same
    // windowed-tangent formula.
    const view: ViewMapping = {
      displayWidth: 384,
      displayHeight: 384,
      imageWidth: 24,
      imageHeight: 24,
    };
    const capture = new PathCapture(3);
    capture.begin({ x: 48, y: 64 });
    for (let i = 1; i < 40; i++) {
      capture.extend({
        x: 48 + i * 7.5,
        y: 64 + i * 5.8 + Math.sin(i / 3) * 12,
      });
    }
    capture.end();
    const submitPaths = capture
      .submittable()
      .map((pts) => pts.map((p) => displayToImage(p, view)));
    expect(submitPaths).toHaveLength(1);
    const drawn: ImagePoint[] = submitPaths[0];
    expect(drawn.length).toBeGreaterThanOrEqual(4);
    const echo = await client.postPaths(jobId, [drawn], 4);
    expect(echo.L).toBe(4);
    const local = pathTangents(drawn);
    expect(echo.tangents[0]).toHaveLength(local.length);
    for (let i = 0; i < local.length; i++) {
      expect(Math.abs(echo.tangents[0][i][0] - local[i][0]))
        .toBeLessThanOrEqual(1e-6);
      expect(Math.abs(echo.tangents[0][i][1] - local[i][1]))
        .toBeLessThanOrEqual(1e-6);
    }
    // Echoed base points are the drawn points that carry tangents.
    expect(echo.tangent_points[0]).toHaveLength(local.length);

    // Progress stream: frames at least every 25 optimizer steps.
    const { steps, previews } = await readEvents(client.eventsUrl(jobId));
    const finalStatus = await waitForStatus(client, jobId,
                                            ["done", "failed", "cancelled"]);
    expect(finalStatus).toBe("done");
    expect(steps.length).toBeGreaterThanOrEqual(60 / 25);
    const ordered = [...steps].every((s, i) => i === 0 || s > steps[i - 1]);
    expect(ordered).toBe(true);
    let previous = 0;
    for (const step of steps) {
      expect(step - previous).toBeLessThanOrEqual(25);
      previous = step;
    }
    expect(steps[steps.length - 1]).toBe(60);

    // The advertised preview URL serves a real PNG.
    const png = await fetch(`${BASE}${previews[previews.length - 1]}`);
    expect(png.status).toBe(200);
    const head = new Uint8Array(await png.arrayBuffer()).slice(0, 8);
    expect([...head]).toEqual([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a,
                               0x0a]);

    // Strokes snapshot downloads as a versioned document.
    const doc = (await client.strokesDocument(jobId)) as {
      version: number;
      strokes: unknown[];
    };
    expect(doc.version).toBe(1);
    expect(doc.strokes).toHaveLength(6);
  }, 90000);

  it("rejects a path shorter than the tangent window", async () => {
    const client = new BrushfitClient(BASE);
    const jobId = await client.createJob(ppmBytes(16, 16), null, {
      stroke_steps: 400,
      pixel_steps: 0,
      n_strokes: 4,
      canvas: { height: 16, width: 16 },
      init: { method: "random" },
    });
    try {
      await expect(
        client.postPaths(jobId, [[[0, 0], [1, 1], [2, 2]]], 3),
      ).rejects.toMatchObject({ status: 400 });
    } finally {
      await client.cancel(jobId);
      await waitForStatus(client, jobId, ["cancelled", "done", "failed"]);
    }
  }, 60000);
});
