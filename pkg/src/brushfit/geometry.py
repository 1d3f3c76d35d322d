"""Brushstroke domain types and quadratic Bezier geometry.

Coordinates are (row, col) with the origin at the top-left; continuous
pixel centers sit at integer coordinates. A brushstroke has exactly 12
scalar degrees of freedom laid out as

    [loc_y, loc_x, p0_y, p0_x, p1_y, p1_x, p2_y, p2_x, width, r, g, b]

where p0/p1/p2 are control-point offsets relative to the location, so
translating a stroke touches only the two location entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from brushfit.errors import ConfigError

STROKE_DOF = 12

# Post-step clamp bounds. Width stays strictly positive; the upper bound is
# relative to the canvas (0.25 * min(H, W)), applied in StrokeSet.clamped().
WIDTH_MIN = 0.5
WIDTH_MAX_FRACTION = 0.25


@dataclass
class Brushstroke:
    """A colored, width-carrying quadratic Bezier curve."""

    location: np.ndarray  # (2,) canvas pixels, (y, x)
    p0_off: np.ndarray    # (2,) start-point offset from location
    p1_off: np.ndarray    # (2,) control-point offset
    p2_off: np.ndarray    # (2,) end-point offset
    width: float
    color: np.ndarray     # (3,) rgb in [0, 1]

    def __post_init__(self):
        self.location = np.asarray(self.location, dtype=np.float64)
        self.p0_off = np.asarray(self.p0_off, dtype=np.float64)
        self.p1_off = np.asarray(self.p1_off, dtype=np.float64)
        self.p2_off = np.asarray(self.p2_off, dtype=np.float64)
        self.width = float(self.width)
        self.color = np.asarray(self.color, dtype=np.float64)
        for name in ("location", "p0_off", "p1_off", "p2_off"):
            if getattr(self, name).shape != (2,):
                raise ValueError(f"{name} must be a 2-vector")
        if self.color.shape != (3,):
            raise ValueError("color must be a 3-vector")
        if not self.width > 0:
            raise ValueError(f"width must be > 0, got {self.width}")

    def as_vector(self) -> np.ndarray:
        """The stroke's 12 parameters in canonical layout order."""
        return np.concatenate([
            self.location, self.p0_off, self.p1_off, self.p2_off,
            [self.width], self.color,
        ])

    @classmethod
    def from_vector(cls, v) -> "Brushstroke":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (STROKE_DOF,):
            raise ValueError(f"expected {STROKE_DOF} parameters, got shape {v.shape}")
        return cls(v[0:2], v[2:4], v[4:6], v[6:8], v[8], v[9:12])


def orientation(stroke: Brushstroke) -> np.ndarray:
    """Direction vector of a stroke: absolute end point minus start point.

    Always recomputed from the control points; equal to p2_off - p0_off
    since the shared location cancels.
    """
    return stroke.p2_off - stroke.p0_off


class StrokeSet:
    """An ordered collection of brushstrokes plus canvas dimensions.

    Internally stored as flat arrays (locations (N,2), offsets (N,3,2),
    widths (N,), colors (N,3)) so the renderer and optimizer can work
    vectorized; the `strokes` property materializes Brushstroke views.
    """

    def __init__(self, locations, offsets, widths, colors, canvas_h, canvas_w):
        self.locations = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
        self.offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 3, 2)
        self.widths = np.asarray(widths, dtype=np.float64).reshape(-1)
        self.colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        self.canvas_h = int(canvas_h)
        self.canvas_w = int(canvas_w)
        n = self.locations.shape[0]
        if not (self.offsets.shape[0] == self.widths.shape[0] == self.colors.shape[0] == n):
            raise ValueError("inconsistent stroke array lengths")
        if self.canvas_h <= 0 or self.canvas_w <= 0:
            raise ValueError("canvas dimensions must be positive")

    @classmethod
    def from_strokes(cls, strokes, canvas_h, canvas_w) -> "StrokeSet":
        strokes = list(strokes)
        if strokes:
            locations = np.stack([s.location for s in strokes])
            offsets = np.stack([np.stack([s.p0_off, s.p1_off, s.p2_off]) for s in strokes])
            widths = np.array([s.width for s in strokes])
            colors = np.stack([s.color for s in strokes])
        else:
            locations = np.zeros((0, 2))
            offsets = np.zeros((0, 3, 2))
            widths = np.zeros((0,))
            colors = np.zeros((0, 3))
        return cls(locations, offsets, widths, colors, canvas_h, canvas_w)

    @classmethod
    def empty(cls, canvas_h, canvas_w) -> "StrokeSet":
        return cls.from_strokes([], canvas_h, canvas_w)

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def strokes(self) -> list:
        return [
            Brushstroke(self.locations[i], self.offsets[i, 0], self.offsets[i, 1],
                        self.offsets[i, 2], self.widths[i], self.colors[i])
            for i in range(self.n)
        ]

    def stroke(self, i: int) -> Brushstroke:
        return Brushstroke(self.locations[i], self.offsets[i, 0], self.offsets[i, 1],
                           self.offsets[i, 2], self.widths[i], self.colors[i])

    def as_parameters(self) -> np.ndarray:
        """(N, 12) parameter matrix in canonical layout order."""
        return np.concatenate([
            self.locations,
            self.offsets.reshape(self.n, 6),
            self.widths[:, None],
            self.colors,
        ], axis=1)

    def with_parameters(self, params) -> "StrokeSet":
        params = np.asarray(params, dtype=np.float64).reshape(self.n, STROKE_DOF)
        return StrokeSet(params[:, 0:2], params[:, 2:8].reshape(self.n, 3, 2),
                         params[:, 8], params[:, 9:12], self.canvas_h, self.canvas_w)

    def copy(self) -> "StrokeSet":
        return StrokeSet(self.locations.copy(), self.offsets.copy(), self.widths.copy(),
                         self.colors.copy(), self.canvas_h, self.canvas_w)

    def clamped(self) -> "StrokeSet":
        """Project all strokes into their valid bounds.

        Locations into [0, H-1] x [0, W-1], widths into
        [WIDTH_MIN, 0.25*min(H, W)], colors into [0, 1]. Offsets are free.
        """
        h, w = self.canvas_h, self.canvas_w
        locations = np.clip(self.locations, [0.0, 0.0], [h - 1.0, w - 1.0])
        widths = np.clip(self.widths, WIDTH_MIN, WIDTH_MAX_FRACTION * min(h, w))
        colors = np.clip(self.colors, 0.0, 1.0)
        return StrokeSet(locations, self.offsets.copy(), widths, colors, h, w)


def bezier_coefficients(s: int):
    """Bernstein coefficients at the S equidistant parameters t_j = j/(S-1)."""
    if s < 2:
        raise ConfigError(f"need at least 2 samples per stroke, got {s}")
    t = np.linspace(0.0, 1.0, s)
    return (1.0 - t) ** 2, 2.0 * (1.0 - t) * t, t ** 2


def bezier_point(stroke: Brushstroke, t: float) -> np.ndarray:
    """Point on the stroke's curve at parameter t, in canvas coordinates."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"curve parameter t must lie in [0, 1], got {t}")
    rel = ((1.0 - t) ** 2 * stroke.p0_off
           + 2.0 * (1.0 - t) * t * stroke.p1_off
           + t ** 2 * stroke.p2_off)
    return stroke.location + rel


def sample_points(locations, offsets, s: int):
    """Sample S equidistant curve points for every stroke, shape (N, S, 2).

    Generic over plain arrays and autodiff tensors: uses only indexing and
    arithmetic, so the renderer's gradient path reuses it unchanged.
    """
    c0, c1, c2 = bezier_coefficients(s)
    c0 = c0[:, None]
    c1 = c1[:, None]
    c2 = c2[:, None]
    rel = (c0 * offsets[:, None, 0, :]
           + c1 * offsets[:, None, 1, :]
           + c2 * offsets[:, None, 2, :])
    return locations[:, None, :] + rel


def sample_stroke(stroke: Brushstroke, s: int) -> np.ndarray:
    """S equidistant points on the curve, endpoints included. Shape (S, 2)."""
    return sample_points(stroke.location[None], np.stack(
        [stroke.p0_off, stroke.p1_off, stroke.p2_off])[None], s)[0]


def stroke_distance(p, stroke: Brushstroke, s: int) -> float:
    """Approximate distance from point p to the stroke.

    Minimum Euclidean distance over S sampled curve points; an upper bound
    on the true curve distance that tightens as S grows.
    """
    pts = sample_stroke(stroke, s)
    d = pts - np.asarray(p, dtype=np.float64)
    return float(np.sqrt((d * d).sum(axis=1)).min())
