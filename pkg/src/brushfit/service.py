"""HTTP job service: submit images, steer running jobs, stream progress.

One optimization thread per job; request handlers only read immutable
snapshots or enqueue work through the job's mailbox (paths, cancel), so the
optimizer never blocks on slow clients. Progress flows out as server-sent
events, one per preview cadence, with replay after Last-Event-ID on
reconnect.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Form, Request, Response, UploadFile
from fastapi.responses import JSONResponse, StreamingResponse

from brushfit import io, losses, optim
from brushfit.errors import ConfigError

FINISHED = ("done", "cancelled", "failed")
PREVIEW_MAX_SIDE = 512
EVENT_KEEPALIVE_SECONDS = 1.0


@dataclass
class JobRecord:
    id: str
    job: optim.FitJob
    created: float
    updated: float
    total_steps: int
    thread: threading.Thread | None = None
    events: list = field(default_factory=list)
    cond: threading.Condition = field(default_factory=threading.Condition)
    latest_canvas: np.ndarray | None = None
    _preview_cache: tuple | None = None
    started: float | None = None
    error: str | None = None

    def publish(self, step: int, terms: dict, preview: np.ndarray | None):
        with self.cond:
            self.updated = time.time()
            if preview is not None:
                self.latest_canvas = preview.copy()
                self.events.append({
                    "step": step,
                    "total_loss": terms.get("total", 0.0),
                    "preview": f"/jobs/{self.id}/preview",
                })
                self.cond.notify_all()

    def finish(self):
        with self.cond:
            self.cond.notify_all()

    def preview_png(self) -> bytes:
        with self.cond:
            canvas = self.latest_canvas
            cached = self._preview_cache
        if canvas is None:
            canvas = np.ones((16, 16, 3))
        # Cache by object identity; the tuple keeps the source array alive
        # so the identity cannot be recycled.
        if cached is not None and cached[0] is canvas:
            return cached[1]
        source = canvas
        side = max(canvas.shape[0], canvas.shape[1])
        if side > PREVIEW_MAX_SIDE:
            scale = PREVIEW_MAX_SIDE / side
            canvas = optim.bilinear_resize(
                canvas, round(canvas.shape[0] * scale),
                round(canvas.shape[1] * scale))
        png = io.encode_png(canvas)
        with self.cond:
            self._preview_cache = (source, png)
        return png


class JobManager:
    def __init__(self, max_jobs: int = 2, artifacts_dir=None):
        self.max_jobs = max_jobs
        self.artifacts_dir = Path(artifacts_dir) if artifacts_dir else None
        self.records: dict[str, JobRecord] = {}
        self.lock = threading.Lock()

    def active_count(self) -> int:
        return sum(1 for r in self.records.values()
                   if r.job.status not in FINISHED)

    def get(self, job_id: str) -> JobRecord | None:
        with self.lock:
            return self.records.get(job_id)

    def submit(self, content: np.ndarray, style: np.ndarray | None,
               config: optim.FitConfig) -> JobRecord:
        with self.lock:
            if self.active_count() >= self.max_jobs:
                raise OverloadedError(
                    f"at most {self.max_jobs} concurrent jobs")
            job = optim.FitJob(config, losses.LossRefs())
            record = JobRecord(
                id=uuid.uuid4().hex[:12], job=job, created=time.time(),
                updated=time.time(),
                total_steps=config.stroke_steps + (
                    config.pixel_steps if style is not None else 0))
            self.records[record.id] = record
        record.thread = threading.Thread(
            target=self._run, args=(record, content, style, config),
            daemon=True)
        record.thread.start()
        return record

    def _run(self, record: JobRecord, content, style, config):
        job = record.job
        try:
            record.started = time.time()
            prepared = optim.prepare_job(content, style, config)
            job.refs = prepared.refs
            job.stroke_set = prepared.stroke_set
            # Publish the initialization render so previews work before the
            # first cadence event.
            from brushfit import renderer
            init_canvas = renderer.render(job.stroke_set, config.render)
            job.canvas = init_canvas
            record.publish(0, {"total": 0.0}, init_canvas)
            optim.fit_image(content, style, config,
                            progress_sink=lambda ev: record.publish(
                                ev.step, ev.terms, ev.preview),
                            job=job)
            self._persist(record)
        except Exception as err:  # noqa: BLE001 - background thread boundary
            record.error = str(err)
            job.status = "failed"
        finally:
            record.finish()

    def _persist(self, record: JobRecord):
        if self.artifacts_dir is None or record.job.status != "done":
            return
        out = self.artifacts_dir / record.id
        out.mkdir(parents=True, exist_ok=True)
        if record.job.stroke_set is not None:
            io.save_strokes(record.job.stroke_set, out / "strokes.json")
        if record.job.canvas is not None:
            io.save_image(record.job.canvas, out / "final.png")


class OverloadedError(RuntimeError):
    pass


def _error(status: int, message: str, **extra):
    return JSONResponse({"detail": message, **extra}, status_code=status)


def create_app(max_jobs: int = 2, artifacts_dir=None, ui_dir=None,
               default_seed: int | None = None) -> FastAPI:
    app = FastAPI(title="brushfit", version="0.1.0")
    manager = JobManager(max_jobs=max_jobs, artifacts_dir=artifacts_dir)
    app.state.manager = manager

    @app.post("/jobs", status_code=202)
    async def create_job(content: UploadFile, style: UploadFile | None = None,
                         config: str | None = Form(None)):
        try:
            doc = json.loads(config) if config else {}
        except json.JSONDecodeError as err:
            return _error(400, f"config is not valid JSON: {err}",
                          field="config")
        if default_seed is not None:
            doc.setdefault("seed", default_seed)
        try:
            cfg = io.parse_config(doc)
        except ConfigError as err:
            return _error(400, str(err), field="config")
        try:
            content_img = io.decode_image(await content.read())
        except ConfigError as err:
            return _error(400, str(err), field="content")
        style_img = None
        if style is not None:
            try:
                style_img = io.decode_image(await style.read())
            except ConfigError as err:
                return _error(400, str(err), field="style")
        try:
            record = manager.submit(content_img, style_img, cfg)
        except OverloadedError as err:
            return _error(429, str(err))
        return {"id": record.id}

    @app.post("/jobs/{job_id}/paths")
    async def add_paths(job_id: str, request: Request):
        record = manager.get(job_id)
        if record is None:
            return _error(404, "unknown job")
        if record.job.status in FINISHED:
            return _error(409, f"job already {record.job.status}")
        try:
            doc = await request.json()
        except json.JSONDecodeError as err:
            return _error(400, f"invalid JSON body: {err}")
        try:
            polylines, l_doc = io.parse_paths_document(doc)
            paths = [losses.ControlPath(p) for p in polylines]
        except ConfigError as err:
            return _error(400, str(err))
        l_value = l_doc if l_doc is not None else \
            record.job.spec.projection_range
        record.job.add_paths(paths, l_value)
        return {
            "tangents": [p.tangents.tolist() for p in paths],
            "tangent_points": [p.tangent_points.tolist() for p in paths],
            "L": l_value,
        }

    @app.get("/jobs/{job_id}/status")
    async def status(job_id: str):
        record = manager.get(job_id)
        if record is None:
            return _error(404, "unknown job")
        job = record.job
        step = job.completed_steps()
        eta = None
        if record.started and step > 0 and job.status == "running":
            rate = step / max(time.time() - record.started, 1e-9)
            eta = max(record.total_steps - step, 0) / max(rate, 1e-9)
        losses_now = job.loss_history[-1] if job.loss_history else {}
        return {
            "status": job.status,
            "step": step,
            "losses": losses_now,
            "eta": eta,
            "error": record.error,
        }

    @app.get("/jobs/{job_id}/preview")
    async def preview(job_id: str):
        record = manager.get(job_id)
        if record is None:
            return _error(404, "unknown job")
        return Response(record.preview_png(), media_type="image/png")

    @app.get("/jobs/{job_id}/events")
    async def events(job_id: str, request: Request):
        record = manager.get(job_id)
        if record is None:
            return _error(404, "unknown job")
        last_raw = request.headers.get("last-event-id") \
            or request.query_params.get("last_id")
        try:
            last_step = int(last_raw) if last_raw is not None else -1
        except ValueError:
            last_step = -1

        def stream(after: int):
            cursor = after
            while True:
                with record.cond:
                    pending = [e for e in record.events if e["step"] > cursor]
                    if not pending and record.job.status not in FINISHED:
                        record.cond.wait(EVENT_KEEPALIVE_SECONDS)
                        pending = [e for e in record.events
                                   if e["step"] > cursor]
                for event in pending:
                    cursor = event["step"]
                    yield (f"id: {event['step']}\n"
                           f"data: {json.dumps(event)}\n\n")
                if not pending:
                    if record.job.status in FINISHED:
                        yield ("event: done\n"
                               f"data: {json.dumps({'status': record.job.status})}\n\n")
                        return
                    yield ": keep-alive\n\n"

        return StreamingResponse(stream(last_step),
                                 media_type="text/event-stream")

    @app.post("/jobs/{job_id}/cancel", status_code=202)
    async def cancel(job_id: str):
        record = manager.get(job_id)
        if record is None:
            return _error(404, "unknown job")
        record.job.request_cancel()
        return {"status": "cancelling"}

    @app.get("/jobs/{job_id}/strokes")
    async def strokes(job_id: str):
        record = manager.get(job_id)
        if record is None:
            return _error(404, "unknown job")
        if record.job.stroke_set is None:
            return _error(409, "job has no strokes yet")
        return io.strokes_to_document(record.job.stroke_set)

    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True),
                  name="ui")

    return app
