"""Adam optimizer and the two-stage fitting pipeline.

Stage one runs projected gradient descent on stroke parameters: each step
rebuilds the nearest-stroke index, evaluates loss and gradient through the
renderer, applies an Adam update, and clamps parameters back into bounds.
Stage two upsamples the rendered canvas and refines raw pixels against the
pixel-stage losses. Fixed seed and config give bit-identical histories.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from brushfit import diff, losses, renderer
from brushfit import init as init_mod
from brushfit.errors import ConfigError, NonFiniteError
from brushfit.geometry import StrokeSet

PREVIEW_EVERY = 25


@dataclass
class AdamState:
    """Kingma-Ba Adam accumulator for one flat parameter vector."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; mutates state, returns new params."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError("parameter and gradient shapes differ")
    if not np.isfinite(grads).all():
        raise NonFiniteError("non-finite gradient passed to adam_step")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class FitConfig:
    """Everything a fitting run needs besides the images."""

    stroke_steps: int = 1000
    pixel_steps: int = 1000
    lr_strokes: float = 0.1
    lr_pixels: float = 0.01
    n_strokes: int = 5000
    canvas_h: int = 256
    canvas_w: int = 256
    pixel_target_side: int = 1024
    seed: int = 0
    init_method: str = "slic"         # "slic" or "random"
    init_width_factor: float = 1.0
    slic_compactness: float = 10.0
    slic_iters: int = 10
    preview_every: int = PREVIEW_EVERY
    render: renderer.RenderParams = field(default_factory=renderer.RenderParams)
    loss: losses.LossSpec = field(default_factory=lambda: losses.LossSpec(mse=1.0))
    pixel_loss: losses.LossSpec | None = None  # defaults at refinement time

    def __post_init__(self):
        for name in ("stroke_steps", "pixel_steps", "n_strokes"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.canvas_h <= 0 or self.canvas_w <= 0:
            raise ConfigError("canvas dimensions must be positive")
        if self.init_method not in ("slic", "random"):
            raise ConfigError(f"unknown init method {self.init_method!r}")


def default_pixel_loss() -> losses.LossSpec:
    return losses.LossSpec(style=1.0, content=1.0, tv=1e-4)


@dataclass
class ProgressEvent:
    """Immutable progress snapshot emitted to a progress sink."""

    step: int
    phase: str               # "strokes" or "pixels"
    terms: dict              # per-term weighted loss values incl. "total"
    preview: np.ndarray | None = None  # copy of the current canvas


class FitJob:
    """Configuration plus mutable optimization state for one fitting run.

    Thread-safe for the interactions the service needs: cancellation and
    mid-run control-path injection are serialized through a lock and picked
    up at the next optimizer step.
    """

    STATUSES = ("pending", "running", "done", "cancelled", "failed")

    def __init__(self, config: FitConfig, refs: losses.LossRefs,
                 stroke_set: StrokeSet | None = None):
        self.config = config
        self.refs = refs
        self.stroke_set = stroke_set
        self.canvas: np.ndarray | None = None
        self.loss_history: list[dict] = []
        self.status = "pending"
        self.spec = config.loss
        self._lock = threading.Lock()
        self._cancel = threading.Event()
        self._pending_paths: list[tuple] = []

    def request_cancel(self):
        self._cancel.set()

    @property
    def cancelled(self) -> bool:
        return self._cancel.is_set()

    def add_paths(self, paths, projection_range=None):
        """Queue control paths; they take effect on the next step."""
        with self._lock:
            self._pending_paths.append((tuple(paths), projection_range))

    def _absorb_pending_paths(self):
        with self._lock:
            pending, self._pending_paths = self._pending_paths, []
        for paths, rng in pending:
            merged = self.spec.paths + paths
            self.spec = self.spec.with_paths(merged, rng)

    def completed_steps(self) -> int:
        return len(self.loss_history)


def _emit(sink, event: ProgressEvent):
    if sink is not None:
        sink(event)


def fit_strokes(job: FitJob, progress_sink=None) -> StrokeSet:
    """Optimize the job's stroke parameters for config.stroke_steps steps."""
    cfg = job.config
    strokes = job.stroke_set
    if strokes is None:
        raise ValueError("job has no initialized stroke set")
    job.status = "running"
    state = AdamState(lr=cfg.lr_strokes)
    n = strokes.n

    for step in range(cfg.stroke_steps):
        if job.cancelled:
            job.status = "cancelled"
            return strokes
        job._absorb_pending_paths()
        index = renderer.build_nearest_index(
            strokes, cfg.render.neighbors, cfg.render.coarse_factor)
        try:
            value, terms, grad = diff.grad_render_loss(
                strokes, cfg.render, job.spec, job.refs, index=index)
        except NonFiniteError as err:
            err.step = step
            job.status = "failed"
            raise
        flat = adam_step(state, strokes.as_parameters().reshape(-1),
                         grad.reshape(-1))
        strokes = strokes.with_parameters(flat.reshape(n, 12)).clamped()
        job.stroke_set = strokes
        job.loss_history.append(terms)
        preview = None
        if (step + 1) % cfg.preview_every == 0 or step + 1 == cfg.stroke_steps:
            preview = renderer.render(strokes, cfg.render, index=index)
            job.canvas = preview
        _emit(progress_sink, ProgressEvent(step + 1, "strokes", terms, preview))
    return strokes


def bilinear_resize(canvas: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel-aligned coordinates."""
    h, w = canvas.shape[:2]
    if (h, w) == (out_h, out_w):
        return canvas.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = canvas[y0][:, x0] * (1 - fx) + canvas[y0][:, x1] * fx
    bot = canvas[y1][:, x0] * (1 - fx) + canvas[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def refine_pixels(canvas: np.ndarray, config: FitConfig,
                  spec: losses.LossSpec | None = None,
                  refs: losses.LossRefs | None = None,
                  progress_sink=None, job: FitJob | None = None,
                  step_offset: int = 0) -> np.ndarray:
    """Pixel-stage refinement: Adam on raw pixel values.

    The canvas is first resampled so its smallest side matches
    config.pixel_target_side; the (resampled) input acts as the content
    image unless refs already carries one.
    """
    cfg = config
    if spec is None:
        spec = cfg.pixel_loss or default_pixel_loss()
    h, w = canvas.shape[:2]
    if cfg.pixel_target_side and min(h, w) != cfg.pixel_target_side:
        scale = cfg.pixel_target_side / min(h, w)
        canvas = bilinear_resize(canvas, round(h * scale), round(w * scale))
    if refs is None:
        refs = losses.LossRefs()
    if refs.target is None or refs.target.shape != canvas.shape:
        refs = losses.LossRefs(target=canvas.copy(), style=refs.style,
                               extractor=refs.extractor)

    pixels = canvas.copy()
    state = AdamState(lr=cfg.lr_pixels)
    for step in range(cfg.pixel_steps):
        if job is not None and job.cancelled:
            if job.status != "cancelled":
                job.status = "cancelled"
            return pixels
        value, terms, grad = diff.grad_pixel_loss(pixels, spec, refs)
        flat = adam_step(state, pixels.reshape(-1), grad.reshape(-1))
        pixels = np.clip(flat.reshape(pixels.shape), 0.0, 1.0)
        if job is not None:
            job.loss_history.append(terms)
            job.canvas = pixels
        preview = None
        if (step + 1) % cfg.preview_every == 0 or step + 1 == cfg.pixel_steps:
            preview = pixels.copy()
        _emit(progress_sink, ProgressEvent(step_offset + step + 1, "pixels",
                                           terms, preview))
    return pixels


def prepare_job(content: np.ndarray, style: np.ndarray | None,
                config: FitConfig) -> FitJob:
    """Resize targets, build loss references, and initialize strokes."""
    target = bilinear_resize(np.asarray(content, dtype=np.float64),
                             config.canvas_h, config.canvas_w)
    needs_features = (config.loss.content > 0 or config.loss.style > 0
                      or style is not None)
    refs = losses.LossRefs(
        target=target, style=style,
        extractor=losses.default_extractor() if needs_features else None)
    job = FitJob(config, refs)
    job.stroke_set = init_mod.initialize(target, config)
    return job


def fit_image(content: np.ndarray, style: np.ndarray | None,
              config: FitConfig, progress_sink=None,
              job: FitJob | None = None):
    """Full pipeline: init, stroke fitting, render, optional pixel stage.

    With style=None this is pure reconstruction: strokes are fitted to the
    content image and the pixel stage is skipped (it only serves to blend
    and texture a stylization).
    """
    cfg = config
    if job is None:
        job = prepare_job(content, style, cfg)

    strokes = fit_strokes(job, progress_sink)
    canvas = renderer.render(strokes, cfg.render)
    job.canvas = canvas
    if job.status == "cancelled":
        return strokes, canvas

    if style is not None and cfg.pixel_steps > 0:
        refs = losses.LossRefs(style=style, extractor=job.refs.extractor
                               or losses.default_extractor())
        canvas = refine_pixels(canvas, cfg, refs=refs,
                               progress_sink=progress_sink, job=job,
                               step_offset=cfg.stroke_steps)
        job.canvas = canvas
    if job.status == "running":
        job.status = "done"
    return strokes, canvas
