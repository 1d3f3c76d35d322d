"""Differentiable rasterization of stroke sets via distance fields.

Per pixel, over its K candidate strokes: the distance D to each stroke is
the minimum over S sampled curve points; a sigmoid of t_sigmoid*(width - D)
masks covered pixels; a softmax of -t_softmax*D softly assigns the pixel to
its nearest candidate; the pixel is the assignment-weighted mix of stroke
colors over an explicit background.

Candidates come from a coarse anchor grid: stroke locations are ranked per
anchor, the top K indices kept, and the index map nearest-neighbor
upsampled to full resolution. All distance buffers are therefore
Theta(H*W*K*S) in size regardless of the number of strokes.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from brushfit import diff as ad
from brushfit.errors import ConfigError
from brushfit.geometry import StrokeSet, sample_points

DEFAULT_SAMPLES = 10
DEFAULT_NEIGHBORS = 20
DEFAULT_COARSE_FACTOR = 0.1
DEFAULT_TEMPERATURE = 10.0

# render_dense materializes the full H*W*N*S tensor; refuse beyond this.
DENSE_ENTRY_LIMIT = 2 ** 27

# Upper bound on a single band's distance-buffer entries (rows*W*K*S).
BAND_ENTRY_BUDGET = 2 ** 22

THREADS_ENV = "BRUSHFIT_THREADS"


@dataclass(frozen=True)
class RenderParams:
    """Renderer knobs; defaults match a 256-pixel canvas."""

    samples: int = DEFAULT_SAMPLES
    neighbors: int = DEFAULT_NEIGHBORS
    t_sigmoid: float = DEFAULT_TEMPERATURE
    t_softmax: float = DEFAULT_TEMPERATURE
    background: tuple = (1.0, 1.0, 1.0)
    coarse_factor: float = DEFAULT_COARSE_FACTOR

    def __post_init__(self):
        if self.samples < 2:
            raise ConfigError("samples per stroke must be >= 2")
        if self.neighbors < 1:
            raise ConfigError("neighbors per pixel must be >= 1")
        if not (self.t_sigmoid > 0 and self.t_softmax > 0):
            raise ConfigError("temperatures must be > 0")
        if not 0.0 < self.coarse_factor <= 1.0:
            raise ConfigError("coarse_factor must be in (0, 1]")
        if len(self.background) != 3:
            raise ConfigError("background must be an RGB triple")

    @property
    def background_color(self) -> np.ndarray:
        return np.asarray(self.background, dtype=np.float64)


@dataclass
class NearestStrokeIndex:
    """Per-pixel indices of the K nearest strokes (by stroke location)."""

    idcs: np.ndarray  # (H, W, K) int

    def __post_init__(self):
        self.idcs = np.asarray(self.idcs)
        if self.idcs.ndim != 3:
            raise ValueError("index must have shape (H, W, K)")


@dataclass
class AllocationLedger:
    """Accounting of distance-buffer allocations, in elements.

    The renderer records every (rows, W, K, S) distance tensor it
    materializes; `peak` is the largest single live buffer. Used to verify
    the memory footprint is independent of the stroke count.
    """

    total: int = 0
    peak: int = 0
    records: list = field(default_factory=list)

    def record(self, elements: int):
        self.total += elements
        self.peak = max(self.peak, elements)
        self.records.append(elements)

    def reset(self):
        self.total = 0
        self.peak = 0
        self.records.clear()


def _anchor_coordinates(full: int, coarse: int) -> np.ndarray:
    """Canvas coordinates of anchor cell centers along one axis."""
    return (np.arange(coarse) + 0.5) * (full / coarse) - 0.5


def _anchor_of_pixel(full: int, coarse: int) -> np.ndarray:
    """Nearest-neighbor map from pixel row/col to anchor row/col."""
    return np.minimum((np.arange(full) * coarse) // full, coarse - 1).astype(np.intp)


def build_nearest_index(strokes: StrokeSet, k: int,
                        coarse_factor: float = DEFAULT_COARSE_FACTOR) -> NearestStrokeIndex:
    """Assign the K nearest strokes (by location) to every pixel.

    Distances are evaluated on a coarse anchor grid of
    max(1, ceil(coarse_factor * dim)) cells per axis and the resulting
    index tensor is nearest-neighbor upsampled to the full canvas.
    """
    n = strokes.n
    if n < 1:
        raise ValueError("cannot build an index for an empty stroke set")
    if not 0.0 < coarse_factor <= 1.0:
        raise ConfigError("coarse_factor must be in (0, 1]")
    if k > n:
        warnings.warn(f"K={k} exceeds stroke count {n}; clamping", stacklevel=2)
        k = n
    h, w = strokes.canvas_h, strokes.canvas_w
    ch = max(1, math.ceil(coarse_factor * h))
    cw = max(1, math.ceil(coarse_factor * w))
    ay = _anchor_coordinates(h, ch)
    ax = _anchor_coordinates(w, cw)
    grid = np.stack(np.meshgrid(ay, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    d2 = ((grid[:, None, :] - strokes.locations[None, :, :]) ** 2).sum(axis=2)
    # Stable sort keeps the lowest stroke index first on exact ties.
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    coarse_idcs = order.reshape(ch, cw, k)
    rows = _anchor_of_pixel(h, ch)
    cols = _anchor_of_pixel(w, cw)
    return NearestStrokeIndex(coarse_idcs[rows[:, None], cols[None, :], :])


def render_graph(locations, offsets, widths, colors, h, w, params: RenderParams,
                 idcs: np.ndarray, row_start: int = 0, row_stop=None,
                 ledger: AllocationLedger | None = None):
    """Core render formula over a band of pixel rows.

    Inputs may be plain arrays or autodiff tensors; this is the single
    implementation both the forward renderer and the gradient engine use.
    Returns a (rows, W, 3) canvas (Tensor when any input needs gradients).
    """
    if row_stop is None:
        row_stop = h
    band = idcs[row_start:row_stop]
    rows, _, k = band.shape
    ys = np.arange(row_start, row_stop, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    coords = np.stack(np.meshgrid(ys, xs, indexing="ij"), axis=-1)  # (rows, W, 2)

    pts = sample_points(locations, offsets, params.samples)       # (N, S, 2)
    cand_pts = ad.gather(pts, band)                               # (rows, W, K, S, 2)
    delta = coords[:, :, None, None, :] - cand_pts
    dist2 = ad.square_sum(delta, axis=-1)                         # (rows, W, K, S)
    if ledger is not None:
        ledger.record(rows * w * k * params.samples)
    # min commutes with the monotone sqrt; taking it first keeps the sqrt
    # (and its backward) on the reduced (rows, W, K) tensor.
    d_strokes = ad.sqrt(ad.min_along(dist2, axis=-1))             # (rows, W, K)

    cand_w = ad.gather(widths, band)
    masks = ad.sigmoid(params.t_sigmoid * (cand_w - d_strokes))
    assign = ad.softmax(d_strokes * -params.t_softmax, axis=-1)
    am = assign * masks                                           # (rows, W, K)

    cand_c = ad.gather(colors, band)                              # (rows, W, K, 3)
    fg = ad.sum(am[:, :, :, None] * cand_c, axis=2)               # (rows, W, 3)
    coverage = ad.sum(am, axis=-1)
    return fg + (1.0 - coverage)[:, :, None] * params.background_color


def _band_plan(h: int, w: int, k: int, s: int) -> list:
    """Split pixel rows so one band's distance buffer stays under budget.

    Depends only on (H, W, K, S), never on the stroke count, so the peak
    allocation is identical across stroke counts.
    """
    per_row = w * k * s
    rows = max(1, BAND_ENTRY_BUDGET // per_row)
    return [(r, min(r + rows, h)) for r in range(0, h, rows)]


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def render(strokes: StrokeSet, params: RenderParams,
           index: NearestStrokeIndex | None = None,
           ledger: AllocationLedger | None = None) -> np.ndarray:
    """Rasterize a stroke set to an (H, W, 3) canvas in [0, 1].

    Colors are clamped to [0, 1] before blending; with the blend being a
    convex combination of stroke colors and the background, the output then
    needs no further clamping beyond float safety. Bands of rows are
    independent, and BRUSHFIT_THREADS > 1 evaluates them concurrently.
    """
    h, w = strokes.canvas_h, strokes.canvas_w
    if strokes.n == 0:
        return np.broadcast_to(params.background_color, (h, w, 3)).copy()
    if index is None:
        index = build_nearest_index(strokes, params.neighbors, params.coarse_factor)
    colors = np.clip(strokes.colors, 0.0, 1.0)
    bands = _band_plan(h, w, index.idcs.shape[2], params.samples)

    def run(span):
        r0, r1 = span
        return render_graph(strokes.locations, strokes.offsets, strokes.widths,
                            colors, h, w, params, index.idcs, r0, r1, ledger)

    threads = _thread_count()
    if threads > 1 and len(bands) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, bands))
    else:
        parts = [run(b) for b in bands]
    canvas = np.concatenate(parts, axis=0)
    return np.clip(canvas, 0.0, 1.0)


def render_dense(strokes: StrokeSet, params: RenderParams,
                 ledger: AllocationLedger | None = None) -> np.ndarray:
    """All-pairs reference renderer: every stroke is a candidate everywhere.

    Same formula as render() but written independently and without the
    nearest-stroke reduction; materializes the full H*W*N*S distance
    tensor, so it refuses anything beyond desk scale.
    """
    h, w = strokes.canvas_h, strokes.canvas_w
    n = strokes.n
    bg = params.background_color
    if n == 0:
        return np.broadcast_to(bg, (h, w, 3)).copy()
    entries = h * w * n * params.samples
    if entries > DENSE_ENTRY_LIMIT:
        raise ValueError(
            f"dense render would materialize {entries} distance entries "
            f"(limit {DENSE_ENTRY_LIMIT}); use render() instead")

    s = params.samples
    t = np.linspace(0.0, 1.0, s)
    basis = np.stack([(1 - t) ** 2, 2 * (1 - t) * t, t ** 2], axis=0)  # (3, S)
    pts = strokes.locations[:, None, :] + np.einsum(
        "bs,nbc->nsc", basis, strokes.offsets)                         # (N, S, 2)

    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    coords = np.stack([ys, xs], axis=-1)                               # (H, W, 2)
    diff = coords[:, :, None, None, :] - pts[None, None, :, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))                         # (H, W, N, S)
    if ledger is not None:
        ledger.record(dist.size)
    d_strokes = dist.min(axis=-1)                                      # (H, W, N)

    masks = 1.0 / (1.0 + np.exp(-np.clip(
        params.t_sigmoid * (strokes.widths[None, None, :] - d_strokes), -500, 500)))
    logits = -params.t_softmax * d_strokes
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    assign = e / e.sum(axis=-1, keepdims=True)

    am = assign * masks
    colors = np.clip(strokes.colors, 0.0, 1.0)
    fg = np.einsum("hwn,nc->hwc", am, colors)
    coverage = am.sum(axis=-1)
    canvas = fg + (1.0 - coverage)[:, :, None] * bg[None, None, :]
    return np.clip(canvas, 0.0, 1.0)
