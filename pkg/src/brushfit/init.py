"""Stroke initialization: SLIC superpixels (default) and seeded random.

SLIC is the usual locality-constrained k-means over (L, a, b, y, x)
features: seeds on a regular grid nudged to the lowest-gradient neighbor,
assignment restricted to a 2S x 2S window around each center, distance
D = sqrt(d_lab^2 + (m/S)^2 * d_xy^2) with compactness m and grid
interval S. Each resulting superpixel seeds one stroke: located at the
centroid, stretched along the region's principal axis, width from the
region area, colored with the region mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from brushfit.errors import ConfigError
from brushfit.geometry import StrokeSet

_SRGB_MATRIX = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """CIELAB conversion of an (H, W, 3) sRGB image in [0, 1]."""
    rgb = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    linear = np.where(rgb <= 0.04045, rgb / 12.92,
                      ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_MATRIX.T / _D65_WHITE
    delta = 6.0 / 29.0
    f = np.where(xyz > delta ** 3, np.cbrt(xyz),
                 xyz / (3.0 * delta ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


@dataclass
class Superpixel:
    """One SLIC segment summarized for stroke seeding."""

    members: np.ndarray      # (P, 2) int pixel coordinates (y, x)
    centroid: np.ndarray     # (2,) mean coordinate
    mean_color: np.ndarray   # (3,) mean RGB of the segment
    axis: np.ndarray         # (2,) unit principal axis
    axis_length: float       # extent of members projected on the axis
    area: int


def _seed_grid(h: int, w: int, k: int):
    """Roughly k seed positions on a regular grid matching the aspect."""
    nw = max(1, math.ceil(math.sqrt(k * w / h)))
    nh = max(1, math.ceil(k / nw))
    ys = (np.arange(nh) + 0.5) * h / nh
    xs = (np.arange(nw) + 0.5) * w / nw
    grid = np.stack(np.meshgrid(ys, xs, indexing="ij"), axis=-1).reshape(-1, 2)
    return grid


def _perturb_to_low_gradient(seeds: np.ndarray, lab: np.ndarray) -> np.ndarray:
    """Move each seed to the lowest-gradient pixel in its 3x3 neighborhood."""
    h, w = lab.shape[:2]
    gy = np.zeros((h, w))
    gx = np.zeros((h, w))
    gy[1:-1] = ((lab[2:] - lab[:-2]) ** 2).sum(axis=-1)
    gx[:, 1:-1] = ((lab[:, 2:] - lab[:, :-2]) ** 2).sum(axis=-1)
    grad = gy + gx
    out = []
    for sy, sx in seeds:
        iy = int(np.clip(round(sy), 1, h - 2)) if h > 2 else int(np.clip(round(sy), 0, h - 1))
        ix = int(np.clip(round(sx), 1, w - 2)) if w > 2 else int(np.clip(round(sx), 0, w - 1))
        y0, y1 = max(0, iy - 1), min(h, iy + 2)
        x0, x1 = max(0, ix - 1), min(w, ix + 2)
        patch = grad[y0:y1, x0:x1]
        dy, dx = np.unravel_index(np.argmin(patch), patch.shape)
        out.append((y0 + dy, x0 + dx))
    return np.asarray(out, dtype=np.float64)


def slic(image: np.ndarray, k: int, compactness: float = 10.0,
         iters: int = 10) -> list[Superpixel]:
    """Partition an image into about k superpixels.

    Every pixel ends up in exactly one segment. Deterministic: no RNG is
    involved anywhere.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if k < 1:
        raise ConfigError("superpixel count k must be >= 1")
    if iters < 1:
        raise ConfigError("need at least one SLIC iteration")
    if k > h * w:
        raise ConfigError(f"requested {k} superpixels for {h * w} pixels")

    lab = rgb_to_lab(image)
    spacing = math.sqrt(h * w / k)
    seeds = _perturb_to_low_gradient(_seed_grid(h, w, k), lab)
    centers = np.concatenate([
        lab[seeds[:, 0].astype(int), seeds[:, 1].astype(int)], seeds], axis=1)
    n_centers = centers.shape[0]

    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ratio2 = (compactness / spacing) ** 2
    labels = np.zeros((h, w), dtype=np.intp)

    for _ in range(iters):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        for ci in range(n_centers):
            cl = centers[ci, :3]
            cy, cx = centers[ci, 3], centers[ci, 4]
            y0, y1 = max(0, int(cy - spacing)), min(h, int(cy + spacing) + 1)
            x0, x1 = max(0, int(cx - spacing)), min(w, int(cx + spacing) + 1)
            if y0 >= y1 or x0 >= x1:
                continue
            d_lab = ((lab[y0:y1, x0:x1] - cl) ** 2).sum(axis=-1)
            d_xy = (ys[y0:y1, x0:x1] - cy) ** 2 + (xs[y0:y1, x0:x1] - cx) ** 2
            d = d_lab + ratio2 * d_xy
            closer = d < best[y0:y1, x0:x1]
            best[y0:y1, x0:x1][closer] = d[closer]
            labels[y0:y1, x0:x1][closer] = ci
        # Pixels outside every window: assign to the globally nearest center.
        missed = labels < 0
        if missed.any():
            my, mx = np.nonzero(missed)
            d_lab = ((lab[my, mx][:, None, :] - centers[None, :, :3]) ** 2).sum(-1)
            d_xy = (my[:, None] - centers[None, :, 3]) ** 2 + \
                   (mx[:, None] - centers[None, :, 4]) ** 2
            labels[my, mx] = np.argmin(d_lab + ratio2 * d_xy, axis=1)
        # Recompute centers from members; empty ones keep their position.
        for ci in range(n_centers):
            mask = labels == ci
            if mask.any():
                centers[ci, :3] = lab[mask].mean(axis=0)
                centers[ci, 3] = ys[mask].mean()
                centers[ci, 4] = xs[mask].mean()

    out = []
    for ci in range(n_centers):
        mask = labels == ci
        if not mask.any():
            continue
        members = np.stack(np.nonzero(mask), axis=1)
        centroid = members.mean(axis=0)
        mean_color = image[mask].mean(axis=0)
        rel = members - centroid
        cov = rel.T @ rel / members.shape[0]
        eigvals, eigvecs = np.linalg.eigh(cov)
        axis = eigvecs[:, np.argmax(eigvals)]
        if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
            axis = -axis
        proj = rel @ axis
        out.append(Superpixel(members=members, centroid=centroid,
                              mean_color=mean_color, axis=axis,
                              axis_length=float(proj.max() - proj.min()),
                              area=int(members.shape[0])))
    return out


def strokes_from_superpixels(superpixels, canvas_h: int, canvas_w: int,
                             width_factor: float = 1.0) -> StrokeSet:
    """One stroke per superpixel, aligned with the region's principal axis."""
    count = len(superpixels)
    locations = np.zeros((count, 2))
    offsets = np.zeros((count, 3, 2))
    widths = np.zeros(count)
    colors = np.zeros((count, 3))
    for i, sp in enumerate(superpixels):
        locations[i] = sp.centroid
        half = 0.5 * sp.axis_length * sp.axis
        offsets[i, 0] = -half
        offsets[i, 1] = 0.0
        offsets[i, 2] = half
        widths[i] = width_factor * math.sqrt(sp.area / math.pi)
        colors[i] = sp.mean_color
    return StrokeSet(locations, offsets, widths, colors,
                     canvas_h, canvas_w).clamped()


def random_init(n: int, canvas_h: int, canvas_w: int, seed: int = 0,
                image: np.ndarray | None = None) -> StrokeSet:
    """Uniformly placed strokes with small random shapes.

    Offsets are bounded by 0.05 * min(H, W) in norm; colors are sampled
    from the image at the (rounded) stroke location when one is given.
    """
    if n < 0:
        raise ConfigError("stroke count must be >= 0")
    rng = np.random.default_rng(seed)
    h, w = canvas_h, canvas_w
    locations = rng.uniform([0, 0], [h - 1, w - 1], size=(n, 2))
    bound = 0.05 * min(h, w)
    radii = rng.uniform(0.0, bound, size=(n, 3))
    angles = rng.uniform(0.0, 2.0 * np.pi, size=(n, 3))
    offsets = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=-1)
    widths = rng.uniform(1.0, 4.0, size=n)
    if image is not None:
        iy = np.clip(np.rint(locations[:, 0]).astype(int), 0, h - 1)
        ix = np.clip(np.rint(locations[:, 1]).astype(int), 0, w - 1)
        colors = np.asarray(image, dtype=np.float64)[iy, ix]
    else:
        colors = rng.uniform(0.0, 1.0, size=(n, 3))
    return StrokeSet(locations, offsets, widths, colors, h, w).clamped()


def slic_init(image: np.ndarray, n: int, canvas_h: int, canvas_w: int,
              width_factor: float = 1.0, compactness: float = 10.0,
              iters: int = 10, seed: int = 0) -> StrokeSet:
    """SLIC-seeded strokes, padded with random strokes if segments fall
    short of n and trimmed to the n largest if they overshoot."""
    superpixels = slic(image, n, compactness=compactness, iters=iters)
    if len(superpixels) > n:
        superpixels = sorted(superpixels, key=lambda sp: -sp.area)[:n]
    base = strokes_from_superpixels(superpixels, canvas_h, canvas_w, width_factor)
    missing = n - base.n
    if missing <= 0:
        return base
    extra = random_init(missing, canvas_h, canvas_w, seed=seed, image=image)
    return StrokeSet(
        np.concatenate([base.locations, extra.locations]),
        np.concatenate([base.offsets, extra.offsets]),
        np.concatenate([base.widths, extra.widths]),
        np.concatenate([base.colors, extra.colors]),
        canvas_h, canvas_w)


def initialize(image: np.ndarray, config) -> StrokeSet:
    """Build the initial stroke set a FitConfig asks for."""
    h, w = config.canvas_h, config.canvas_w
    if config.init_method == "random":
        return random_init(config.n_strokes, h, w, config.seed, image)
    return slic_init(image, config.n_strokes, h, w,
                     width_factor=config.init_width_factor,
                     compactness=config.slic_compactness,
                     iters=config.slic_iters, seed=config.seed)
