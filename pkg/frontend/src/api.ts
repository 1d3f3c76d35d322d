/**
 * REST and SSE client for the brushfit job service.
 *
 * The HTTP schema is the only contract with the optimizer; nothing here
 * reaches into optimization state except through these endpoints.
 */

import type { ImagePoint } from "./mapping.js";

export interface JobConfig {
  stroke_steps?: number;
  pixel_steps?: number;
  n_strokes?: number;
  seed?: number;
  preview_every?: number;
  canvas?: { height: number; width: number };
  init?: { method: string };
}

export interface JobStatus {
  status: string;
  step: number;
  losses: Record<string, number>;
  eta: number | null;
  error: string | null;
}

export interface PathEcho {
  tangents: ImagePoint[][];
  tangent_points: ImagePoint[][];
  L: number;
}

export interface ProgressEvent {
  step: number;
  total_loss: number;
  preview: string;
}

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, detail: string) {
    super(detail);
    this.status = status;
  }
}

async function errorOf(resp: Response): Promise<ApiError> {
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    /* non-JSON error body */
  }
  return new ApiError(resp.status, detail);
}

export class BrushfitClient {
  readonly baseUrl: string;

  constructor(baseUrl = "") {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  async createJob(
    content: Blob,
    style: Blob | null,
    config: JobConfig,
  ): Promise<string> {
    const form = new FormData();
    form.append("content", content, "content.png");
    if (style) form.append("style", style, "style.png");
    form.append("config", JSON.stringify(config));
    const resp = await fetch(`${this.baseUrl}/jobs`, {
      method: "POST",
      body: form,
    });
    if (!resp.ok) throw await errorOf(resp);
    const body = await resp.json();
    return body.id as string;
  }

  async postPaths(
    jobId: string,
    paths: ImagePoint[][],
    l: number,
  ): Promise<PathEcho> {
    const resp = await fetch(`${this.baseUrl}/jobs/${jobId}/paths`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ paths, L: l }),
    });
    if (!resp.ok) throw await errorOf(resp);
    return (await resp.json()) as PathEcho;
  }

  async status(jobId: string): Promise<JobStatus> {
    const resp = await fetch(`${this.baseUrl}/jobs/${jobId}/status`);
    if (!resp.ok) throw await errorOf(resp);
    return (await resp.json()) as JobStatus;
  }

  async cancel(jobId: string): Promise<void> {
    const resp = await fetch(`${this.baseUrl}/jobs/${jobId}/cancel`, {
      method: "POST",
    });
    if (!resp.ok) throw await errorOf(resp);
  }

  async strokesDocument(jobId: string): Promise<unknown> {
    const resp = await fetch(`${this.baseUrl}/jobs/${jobId}/strokes`);
    if (!resp.ok) throw await errorOf(resp);
    return resp.json();
  }

  previewUrl(jobId: string, step?: number): string {
    const bust = step === undefined ? "" : `?step=${step}`;
    return `${this.baseUrl}/jobs/${jobId}/preview${bust}`;
  }

  eventsUrl(jobId: string): string {
    return `${this.baseUrl}/jobs/${jobId}/events`;
  }

  strokesUrl(jobId: string): string {
    return `${this.baseUrl}/jobs/${jobId}/strokes`;
  }

  /**
   * Subscribe to the job's progress stream. EventSource reconnects on
   * drop and the server replays from Last-Event-ID, so the console
   * resumes at the latest step without missing frames.
   */
  subscribe(
    jobId: string,
    onEvent: (ev: ProgressEvent) => void,
    onDone: (status: string) => void,
  ): EventSource {
    const source = new EventSource(this.eventsUrl(jobId));
    source.onmessage = (msg) => {
      try {
        onEvent(JSON.parse(msg.data) as ProgressEvent);
      } catch {
        /* ignore malformed frames */
      }
    };
    source.addEventListener("done", (msg) => {
      let status = "done";
      try {
        status = JSON.parse((msg as MessageEvent).data).status ?? "done";
      } catch {
        /* default */
      }
      source.close();
      onDone(status);
    });
    return source;
  }
}
