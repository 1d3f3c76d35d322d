/**
 * Job console: upload images, steer a running fit by drawing flow curves,
 * watch live previews, download results.
 *
 * All optimization state lives server-side; this page only talks to the
 * documented endpoints and renders what comes back. Tangent arrows are
 * drawn from the server echo, never recomputed locally, so the overlay
 * always shows the vectors the projection loss actually uses.
 */

import { BrushfitClient, type ProgressEvent } from "./api.js";
import { PathCapture } from "./draw.js";
import {
  displayToImage,
  imageToDisplay,
  type ImagePoint,
  type Point,
  type ViewMapping,
} from "./mapping.js";
import { MIN_PATH_POINTS } from "./tangents.js";
import { drawSparkline } from "./sparkline.js";

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const client = new BrushfitClient("");
const capture = new PathCapture(3);

let jobId: string | null = null;
let source: EventSource | null = null;
let lossHistory: number[] = [];
let echoedTangents: { base: ImagePoint; dir: ImagePoint }[] = [];
let canvasSize = { height: 256, width: 256 };

function view(): ViewMapping {
  const overlay = $<HTMLCanvasElement>("overlay");
  return {
    displayWidth: overlay.clientWidth,
    displayHeight: overlay.clientHeight,
    imageWidth: canvasSize.width,
    imageHeight: canvasSize.height,
  };
}

function setStatus(text: string): void {
  $("status").textContent = text;
}

function redrawOverlay(): void {
  const overlay = $<HTMLCanvasElement>("overlay");
  overlay.width = overlay.clientWidth;
  overlay.height = overlay.clientHeight;
  const ctx = overlay.getContext("2d")!;
  ctx.clearRect(0, 0, overlay.width, overlay.height);

  ctx.strokeStyle = "#ff3366";
  ctx.lineWidth = 2;
  const drawPath = (pts: Point[]) => {
    if (pts.length < 2) return;
    ctx.beginPath();
    ctx.moveTo(pts[0].x, pts[0].y);
    for (const p of pts.slice(1)) ctx.lineTo(p.x, p.y);
    ctx.stroke();
  };
  capture.paths.forEach(drawPath);
  if (capture.activePath) drawPath(capture.activePath);

  // Server-echoed tangents as short arrows.
  ctx.strokeStyle = "#22bb44";
  ctx.fillStyle = "#22bb44";
  ctx.lineWidth = 1.5;
  const v = view();
  const len = 14;
  for (const { base, dir } of echoedTangents) {
    const p = imageToDisplay(base, v);
    const q = { x: p.x + dir[1] * len, y: p.y + dir[0] * len };
    ctx.beginPath();
    ctx.moveTo(p.x, p.y);
    ctx.lineTo(q.x, q.y);
    ctx.stroke();
    const angle = Math.atan2(q.y - p.y, q.x - p.x);
    ctx.beginPath();
    ctx.moveTo(q.x, q.y);
    ctx.lineTo(q.x - 5 * Math.cos(angle - 0.4), q.y - 5 * Math.sin(angle - 0.4));
    ctx.lineTo(q.x - 5 * Math.cos(angle + 0.4), q.y - 5 * Math.sin(angle + 0.4));
    ctx.closePath();
    ctx.fill();
  }
}

function updatePathButtons(): void {
  const sendable = capture.submittable().length > 0;
  $<HTMLButtonElement>("send-paths").disabled = !sendable || jobId === null;
  $("path-hint").textContent = capture.hasTooShortPath()
    ? `paths need at least ${MIN_PATH_POINTS} points to steer strokes`
    : "";
}

function wireDrawing(): void {
  const overlay = $<HTMLCanvasElement>("overlay");
  const position = (ev: PointerEvent): Point => {
    const rect = overlay.getBoundingClientRect();
    return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  };
  overlay.addEventListener("pointerdown", (ev) => {
    overlay.setPointerCapture(ev.pointerId);
    capture.begin(position(ev));
    redrawOverlay();
  });
  overlay.addEventListener("pointermove", (ev) => {
    if (capture.extend(position(ev))) redrawOverlay();
  });
  overlay.addEventListener("pointerup", () => {
    capture.end();
    redrawOverlay();
    updatePathButtons();
  });
}

async function sendPaths(): Promise<void> {
  if (!jobId) return;
  const v = view();
  const paths = capture
    .submittable()
    .map((pts) => pts.map((p) => displayToImage(p, v)));
  const l = Number($<HTMLInputElement>("l-range").value);
  try {
    const echo = await client.postPaths(jobId, paths, l);
    echoedTangents = [];
    echo.tangents.forEach((tangents, i) => {
      tangents.forEach((dir, j) => {
        echoedTangents.push({ base: echo.tangent_points[i][j], dir });
      });
    });
    redrawOverlay();
    setStatus(`steering with ${paths.length} path(s), L=${echo.L}`);
  } catch (err) {
    setStatus(`path rejected: ${(err as Error).message}`);
  }
}

function onProgress(ev: ProgressEvent): void {
  lossHistory.push(ev.total_loss);
  drawSparkline($<HTMLCanvasElement>("sparkline"), lossHistory);
  $("step").textContent = String(ev.step);
  $("loss").textContent = ev.total_loss.toExponential(3);
  const img = $<HTMLImageElement>("preview");
  img.src = client.previewUrl(jobId!, ev.step);
}

async function start(): Promise<void> {
  const contentInput = $<HTMLInputElement>("content-file");
  const styleInput = $<HTMLInputElement>("style-file");
  const content = contentInput.files?.[0];
  if (!content) {
    setStatus("choose a content image first");
    return;
  }
  const strokes = Number($<HTMLInputElement>("n-strokes").value);
  const steps = Number($<HTMLInputElement>("steps").value);
  if (!(strokes >= 1) || !(steps >= 1)) {
    setStatus("strokes and steps must be positive");
    return;
  }
  const config = {
    n_strokes: strokes,
    stroke_steps: steps,
    pixel_steps: 0,
    preview_every: 25,
    canvas: canvasSize,
  };
  try {
    jobId = await client.createJob(content, styleInput.files?.[0] ?? null,
                                   config);
  } catch (err) {
    setStatus(`submit failed: ${(err as Error).message}`);
    return;
  }
  lossHistory = [];
  echoedTangents = [];
  setStatus(`job ${jobId} running`);
  $<HTMLButtonElement>("start").disabled = true;
  $<HTMLButtonElement>("cancel").disabled = false;
  $<HTMLImageElement>("preview").src = client.previewUrl(jobId, 0);
  source = client.subscribe(jobId, onProgress, (status) => {
    setStatus(`job ${jobId} ${status}`);
    $<HTMLButtonElement>("start").disabled = false;
    $<HTMLButtonElement>("cancel").disabled = true;
    const dl = $<HTMLAnchorElement>("download-strokes");
    dl.href = client.strokesUrl(jobId!);
    dl.classList.remove("disabled");
    const dlImg = $<HTMLAnchorElement>("download-image");
    dlImg.href = client.previewUrl(jobId!);
    dlImg.classList.remove("disabled");
  });
  updatePathButtons();
}

async function cancel(): Promise<void> {
  if (jobId) await client.cancel(jobId);
}

function wireControls(): void {
  $("start").addEventListener("click", () => void start());
  $("cancel").addEventListener("click", () => void cancel());
  $("send-paths").addEventListener("click", () => void sendPaths());
  $("undo-path").addEventListener("click", () => {
    capture.undo();
    redrawOverlay();
    updatePathButtons();
  });
  $("clear-paths").addEventListener("click", () => {
    capture.clear();
    echoedTangents = [];
    redrawOverlay();
    updatePathButtons();
  });
  const slider = $<HTMLInputElement>("l-range");
  slider.addEventListener("input", () => {
    $("l-value").textContent = slider.value;
  });
  // Changing L mid-run re-submits the current paths with the new range.
  slider.addEventListener("change", () => {
    if (jobId && capture.submittable().length > 0) void sendPaths();
  });
}

wireDrawing();
wireControls();
updatePathButtons();
setStatus("idle");
