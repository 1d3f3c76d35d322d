"""Scalar objectives: reconstruction, content/style, smoothness, flow control.

All loss functions are written against the generic ops in brushfit.diff, so
they accept plain arrays (returning floats) or graph tensors (returning
nodes) interchangeably. Style statistics use channel Gram matrices; the
style term for layer l is ||G_r - G_s||_F / (N_l^2 * M_l^2) with N_l the
channel count and M_l the pixel count of that layer's feature map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from brushfit import diff as ad
from brushfit.errors import ConfigError

TANGENT_WINDOW = 3  # points averaged ahead of each path point
DEFAULT_PROJECTION_RANGE = 30  # strokes steered per tangent point

_NORM_FLOOR = 1e-12


# -- feature extractor ---------------------------------------------------

class RandomConvFeatures:
    """Deterministic multi-scale feature extractor.

    Five stages of 3x3 convolutions with fixed random kernels, relu, and
    2x2 average pooling between stages. Layer "f<i>" is the post-relu map
    of stage i, halving in resolution per stage. A stand-in for pretrained
    perceptual features: deterministic, dependency-free, and shaped like
    the real thing for every multi-layer loss.
    """

    CHANNELS = (16, 32, 64, 128, 128)

    def __init__(self, seed: int = 0, kernels=None):
        self.seed = seed
        if kernels is not None:
            self.kernels = [np.asarray(k, dtype=np.float64) for k in kernels]
        else:
            rng = np.random.default_rng(seed)
            self.kernels = []
            cin = 3
            for cout in self.CHANNELS:
                scale = np.sqrt(2.0 / (9 * cin))
                self.kernels.append(rng.normal(0.0, scale, size=(3, 3, cin, cout)))
                cin = cout
        self.layer_names = tuple(f"f{i + 1}" for i in range(len(self.kernels)))

    def layers(self):
        return self.layer_names

    def extract(self, canvas, layers):
        """Feature maps for the requested layer names, keyed by name."""
        unknown = set(layers) - set(self.layer_names)
        if unknown:
            raise ConfigError(f"unknown feature layers: {sorted(unknown)}")
        wanted = set(layers)
        out = {}
        cur = canvas - 0.5  # center pixel values around zero
        remaining = len(wanted)
        for name, kernel in zip(self.layer_names, self.kernels):
            feat = ad.relu(ad.conv2d(cur, kernel))
            if name in wanted:
                out[name] = feat
                remaining -= 1
                if remaining == 0:
                    break
            if feat.shape[0] < 2 or feat.shape[1] < 2:
                raise ValueError(
                    f"canvas too small for feature layers beyond {name}")
            cur = ad.avg_pool2(feat)
        return out

    def save_weights(self, path):
        """Write kernels as a JSON header line plus little-endian float32."""
        header = {"layers": [
            {"name": n, "shape": list(k.shape)}
            for n, k in zip(self.layer_names, self.kernels)
        ]}
        with open(path, "wb") as f:
            f.write(json.dumps(header).encode("ascii") + b"\n")
            for k in self.kernels:
                f.write(k.astype("<f4").tobytes())

    @classmethod
    def load_weights(cls, path) -> "RandomConvFeatures":
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode("ascii"))
            kernels = []
            for entry in header["layers"]:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape))
                raw = f.read(count * 4)
                if len(raw) != count * 4:
                    raise ValueError("weight file truncated")
                kernels.append(np.frombuffer(raw, dtype="<f4").reshape(shape))
        return cls(kernels=kernels)


def default_extractor(seed: int = 0) -> RandomConvFeatures:
    return RandomConvFeatures(seed=seed)


# -- control paths -------------------------------------------------------

def path_tangents(points, q: int = TANGENT_WINDOW) -> np.ndarray:
    """Unit tangents along a polyline: for each point, the normalized
    offset from it to the mean of its next q points. The last q points
    carry no tangent. Shape (M - q, 2)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    m = points.shape[0]
    if q < 1:
        raise ConfigError("tangent window must be >= 1")
    if m <= q:
        raise ConfigError(f"path needs at least {q + 1} points, got {m}")
    ahead = np.stack([points[i + 1:i + 1 + q].mean(axis=0) for i in range(m - q)])
    raw = ahead - points[:m - q]
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms < _NORM_FLOOR):
        raise ValueError("path contains a degenerate (zero-length) tangent")
    return raw / norms[:, None]


@dataclass(frozen=True, eq=False)
class ControlPath:
    """A user-drawn polyline with derived unit tangent vectors."""

    points: np.ndarray           # (M, 2) canvas coordinates (y, x)
    q: int = TANGENT_WINDOW
    tangents: np.ndarray = None  # (M - q, 2), derived

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "tangents", path_tangents(pts, self.q))

    @property
    def tangent_points(self) -> np.ndarray:
        """The path points that carry a tangent (the first M - q)."""
        return self.points[:self.points.shape[0] - self.q]


# -- loss configuration --------------------------------------------------

@dataclass(frozen=True)
class LossSpec:
    """Weighted list of objective terms. All weights are >= 0."""

    mse: float = 0.0
    content: float = 0.0
    style: float = 0.0
    tv: float = 0.0
    projection: float = 0.0
    content_layers: tuple = ("f4", "f5")
    style_layers: tuple = ("f1", "f2", "f3", "f4", "f5")
    style_layer_weights: tuple | None = None  # uniform 1/len when None
    projection_range: int = DEFAULT_PROJECTION_RANGE  # L nearest strokes
    paths: tuple = ()

    def __post_init__(self):
        for name in ("mse", "content", "style", "tv", "projection"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")
        if not any(getattr(self, n) > 0
                   for n in ("mse", "content", "style", "tv", "projection")):
            raise ConfigError("loss spec needs at least one positive term")
        if self.projection_range < 1:
            raise ConfigError("projection range L must be >= 1")
        if self.style_layer_weights is not None and \
                len(self.style_layer_weights) != len(self.style_layers):
            raise ConfigError("style_layer_weights must match style_layers")

    def with_paths(self, paths, projection_range=None) -> "LossSpec":
        kwargs = {"paths": tuple(paths)}
        if projection_range is not None:
            kwargs["projection_range"] = projection_range
        if self.projection == 0.0:
            kwargs["projection"] = 1.0
        return replace(self, **kwargs)


@dataclass
class LossRefs:
    """Reference images and extractor a LossSpec is evaluated against.

    Feature maps and Gram matrices of the constant reference images are
    cached; only the rendered canvas is re-extracted per evaluation.
    """

    target: np.ndarray | None = None   # mse target and content image
    style: np.ndarray | None = None
    extractor: RandomConvFeatures | None = None
    _style_grams: dict = field(default_factory=dict, repr=False)
    _content_features: dict = field(default_factory=dict, repr=False)

    def style_gram(self, layer):
        """Cached Gram matrix and feature shape of the style image."""
        if layer not in self._style_grams:
            feat = self.extractor.extract(self.style, [layer])[layer]
            self._style_grams[layer] = (gram(feat), feat.shape)
        return self._style_grams[layer]

    def content_feature(self, layer):
        if layer not in self._content_features:
            feat = self.extractor.extract(self.target, [layer])[layer]
            self._content_features[layer] = feat
        return self._content_features[layer]


# -- individual losses ---------------------------------------------------

def mse(a, b):
    """Mean squared elementwise difference."""
    sa = a.shape if isinstance(a, ad.Tensor) else np.shape(a)
    sb = b.shape if isinstance(b, ad.Tensor) else np.shape(b)
    if tuple(sa) != tuple(sb):
        raise ValueError(f"shape mismatch: {sa} vs {sb}")
    d = a - b
    return ad.mean(d * d)


def gram(features):
    """Unnormalized channel Gram matrix G_ij = sum_hw F_hwi * F_hwj."""
    h, w, c = features.shape
    flat = features.reshape((h * w, c))
    return ad.matmul(flat.T, flat)


def _frobenius(x):
    return ad.sqrt(ad.sum(x * x))


def style_loss(rendered, style_img, extractor, layers, layer_weights=None):
    """Gram-statistic distance summed over layers.

    Per layer: ||G_r - G_s||_F normalized by (channels^2 * pixels^2);
    layer weights default to uniform 1/len(layers).
    """
    layers = tuple(layers)
    if layer_weights is None:
        layer_weights = tuple(1.0 / len(layers) for _ in layers)
    feats_r = extractor.extract(rendered, layers)
    feats_s = extractor.extract(np.asarray(style_img, dtype=np.float64), layers)
    total = None
    for name, w in zip(layers, layer_weights):
        fr = feats_r[name]
        fs = feats_s[name]
        h, wid, c = fs.shape
        norm = 1.0 / (float(c) ** 2 * float(h * wid) ** 2)
        term = w * norm * _frobenius(gram(fr) - gram(fs))
        total = term if total is None else total + term
    return total


def content_loss(rendered, content_img, extractor, layers):
    """Euclidean feature-space distance summed over the chosen layers."""
    layers = tuple(layers)
    feats_r = extractor.extract(rendered, layers)
    feats_c = extractor.extract(np.asarray(content_img, dtype=np.float64), layers)
    total = None
    for name in layers:
        d = feats_r[name] - feats_c[name]
        term = _frobenius(d)
        total = term if total is None else total + term
    return total


def tv_loss(canvas):
    """Sum of squared forward differences along rows and columns."""
    dy = canvas[1:, :, :] - canvas[:-1, :, :]
    dx = canvas[:, 1:, :] - canvas[:, :-1, :]
    return ad.sum(dy * dy) + ad.sum(dx * dx)


# -- flow-control projection loss ----------------------------------------

def select_strokes_for_paths(locations: np.ndarray, paths, l: int):
    """Indices of the L nearest strokes to every tangent point.

    One (T_p, L) integer array per path; L is clamped to the stroke count.
    The selection is recomputed from current locations each call and is
    treated as constant by the gradient engine.
    """
    n = locations.shape[0]
    if n == 0:
        raise ValueError("projection loss needs a nonempty stroke set")
    l = min(l, n)
    out = []
    for path in paths:
        pts = path.tangent_points
        d2 = ((pts[:, None, :] - locations[None, :, :]) ** 2).sum(axis=2)
        out.append(np.argsort(d2, axis=1, kind="stable")[:, :l])
    return out


def unit_orientations(offsets):
    """Unit direction vectors (end minus start control point) per stroke."""
    d = offsets[:, 2, :] - offsets[:, 0, :]
    norm = ad.sqrt(ad.sum(d * d, axis=-1, keepdims=True))
    return d / ad.maximum(norm, _NORM_FLOOR)


def projection_term(offsets, paths, selections):
    """Mean over (tangent, stroke) pairs of 1 - |<orientation, tangent>|."""
    unit = unit_orientations(offsets)
    total = None
    pairs = 0
    for path, sel in zip(paths, selections):
        chosen = ad.gather(unit, sel)                     # (T, L, 2)
        dots = ad.sum(chosen * path.tangents[:, None, :], axis=-1)
        contrib = ad.sum(1.0 - ad.absolute(dots))
        total = contrib if total is None else total + contrib
        pairs += sel.size
    return total * (1.0 / pairs)


def projection_loss(strokes, paths, l: int = DEFAULT_PROJECTION_RANGE) -> float:
    """Alignment penalty between stroke orientations and path tangents."""
    paths = list(paths)
    if not paths:
        raise ValueError("no control paths given")
    selections = select_strokes_for_paths(strokes.locations, paths, l)
    return float(projection_term(strokes.offsets, paths, selections))


def mean_abs_alignment(strokes, paths, l: int = DEFAULT_PROJECTION_RANGE) -> float:
    """Mean |<orientation, tangent>| over the affected pairs (1 - loss)."""
    return 1.0 - projection_loss(strokes, paths, l)


# -- combined evaluation -------------------------------------------------

def evaluate(rendered, spec: LossSpec, refs: LossRefs,
             stroke_offsets=None, stroke_locations=None,
             projection_selections=None):
    """Weighted total of all active terms plus a per-term value dict.

    `rendered` may be a graph tensor (gradient path) or a plain canvas.
    Stroke offsets/locations are only needed when the projection term is
    active; a precomputed selection may be passed to freeze it.
    """
    total = None
    terms = {}

    def accumulate(name, weight, value):
        nonlocal total
        contrib = weight * value
        terms[name] = float(contrib.data) if isinstance(contrib, ad.Tensor) \
            else float(contrib)
        total = contrib if total is None else total + contrib

    if spec.mse > 0:
        if refs.target is None:
            raise ConfigError("mse term requires a target image")
        accumulate("mse", spec.mse, mse(rendered, refs.target))
    if spec.content > 0:
        if refs.target is None or refs.extractor is None:
            raise ConfigError("content term requires a content image and extractor")
        feats_r = refs.extractor.extract(rendered, spec.content_layers)
        value = None
        for name in spec.content_layers:
            d = feats_r[name] - refs.content_feature(name)
            term = _frobenius(d)
            value = term if value is None else value + term
        accumulate("content", spec.content, value)
    if spec.style > 0:
        if refs.style is None or refs.extractor is None:
            raise ConfigError("style term requires a style image and extractor")
        layers = spec.style_layers
        weights = spec.style_layer_weights or \
            tuple(1.0 / len(layers) for _ in layers)
        feats_r = refs.extractor.extract(rendered, layers)
        value = None
        for name, w in zip(layers, weights):
            gs, (fh, fw, fc) = refs.style_gram(name)
            norm = 1.0 / (float(fc) ** 2 * float(fh * fw) ** 2)
            term = w * norm * _frobenius(gram(feats_r[name]) - gs)
            value = term if value is None else value + term
        accumulate("style", spec.style, value)
    if spec.tv > 0:
        accumulate("tv", spec.tv, tv_loss(rendered))
    if spec.projection > 0 and spec.paths:
        if stroke_offsets is None or stroke_locations is None:
            raise ConfigError("projection term requires stroke arrays")
        if projection_selections is None:
            projection_selections = select_strokes_for_paths(
                stroke_locations, spec.paths, spec.projection_range)
        accumulate("projection", spec.projection, projection_term(
            stroke_offsets, spec.paths, projection_selections))

    if total is None:
        # Every configured term was inapplicable (e.g. projection with no
        # paths yet); fall back to a zero tied to the rendered canvas.
        total = ad.sum(rendered * 0.0)
        terms["total"] = 0.0
        return total, terms

    terms["total"] = float(total.data) if isinstance(total, ad.Tensor) \
        else float(total)
    return total, terms
