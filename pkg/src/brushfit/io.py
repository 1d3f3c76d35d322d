"""Image and stroke-set serialization plus run-configuration parsing.

Images: 8-bit PNG (RGB or RGBA, alpha discarded) and binary PPM (P6),
mapped linearly to [0, 1] floats. Stroke sets and control paths travel as
human-inspectable JSON. Config documents mirror FitConfig and reject any
key they do not know.
"""

from __future__ import annotations

import dataclasses
import io as _stdio
import json
from pathlib import Path

import numpy as np
from PIL import Image

from brushfit import losses, optim, renderer
from brushfit.errors import ConfigError
from brushfit.geometry import StrokeSet

STROKE_DOC_VERSION = 1

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


# -- images ----------------------------------------------------------------

def decode_image(data: bytes) -> np.ndarray:
    """Decode PNG or PPM bytes to an (H, W, 3) float canvas in [0, 1]."""
    if data.startswith(_PNG_MAGIC):
        try:
            img = Image.open(_stdio.BytesIO(data))
            img.load()
        except Exception as err:
            raise ConfigError(f"corrupt PNG data: {err}") from err
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
        return arr / 255.0
    if data.startswith(b"P6"):
        return _decode_ppm(data)
    raise ConfigError("unsupported image format (expected PNG or PPM P6)")


def _decode_ppm(data: bytes) -> np.ndarray:
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise ConfigError("corrupt PPM header")
        fields.append(int(token))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval <= 0 or maxval > 255:
        raise ConfigError(f"unsupported PPM maxval {maxval} (8-bit only)")
    raster = data[pos:pos + width * height * 3]
    if len(raster) != width * height * 3:
        raise ConfigError("truncated PPM raster")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return arr.astype(np.float64) / maxval


def load_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"image not found: {path}")
    return decode_image(path.read_bytes())


def quantize(canvas: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize to uint8, rounding half up."""
    clipped = np.clip(np.asarray(canvas, dtype=np.float64), 0.0, 1.0)
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)


def encode_png(canvas: np.ndarray) -> bytes:
    buf = _stdio.BytesIO()
    Image.fromarray(quantize(canvas), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_image(canvas: np.ndarray, path):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        path.write_bytes(encode_png(canvas))
    elif suffix == ".ppm":
        q = quantize(canvas)
        header = f"P6\n{q.shape[1]} {q.shape[0]}\n255\n".encode("ascii")
        path.write_bytes(header + q.tobytes())
    else:
        raise ConfigError(f"unsupported image extension {suffix!r} "
                          "(use .png or .ppm)")


# -- stroke-set documents ----------------------------------------------------

def strokes_to_document(strokes: StrokeSet) -> dict:
    return {
        "version": STROKE_DOC_VERSION,
        "canvas": {"height": strokes.canvas_h, "width": strokes.canvas_w},
        "strokes": [
            {
                "location": list(strokes.locations[i]),
                "p0": list(strokes.offsets[i, 0]),
                "p1": list(strokes.offsets[i, 1]),
                "p2": list(strokes.offsets[i, 2]),
                "width": float(strokes.widths[i]),
                "color": list(strokes.colors[i]),
            }
            for i in range(strokes.n)
        ],
    }


def document_to_strokes(doc: dict) -> StrokeSet:
    if not isinstance(doc, dict) or doc.get("version") != STROKE_DOC_VERSION:
        raise ConfigError(
            f"unsupported stroke document version {doc.get('version')!r}")
    canvas = doc.get("canvas", {})
    records = doc.get("strokes", [])
    n = len(records)
    locations = np.zeros((n, 2))
    offsets = np.zeros((n, 3, 2))
    widths = np.zeros(n)
    colors = np.zeros((n, 3))
    for i, rec in enumerate(records):
        locations[i] = rec["location"]
        offsets[i, 0] = rec["p0"]
        offsets[i, 1] = rec["p1"]
        offsets[i, 2] = rec["p2"]
        widths[i] = rec["width"]
        colors[i] = rec["color"]
    return StrokeSet(locations, offsets, widths, colors,
                     canvas["height"], canvas["width"])


def save_strokes(strokes: StrokeSet, path):
    Path(path).write_text(
        json.dumps(strokes_to_document(strokes), indent=1) + "\n")


def load_strokes(path) -> StrokeSet:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"stroke file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid stroke JSON: {err}") from err
    return document_to_strokes(doc)


# -- control-path documents --------------------------------------------------

def parse_paths_document(doc):
    """Accept either a bare list of polylines or {"paths": [...], "L": n}.

    Each polyline is a list of [y, x] pairs. Returns (list of (M, 2)
    arrays, L or None).
    """
    l_value = None
    if isinstance(doc, dict):
        unknown = set(doc) - {"paths", "L"}
        if unknown:
            raise ConfigError(f"unknown path-document keys: {sorted(unknown)}")
        l_value = doc.get("L")
        doc = doc.get("paths", [])
    if not isinstance(doc, list) or not doc:
        raise ConfigError("path document must contain at least one polyline")
    out = []
    for i, line in enumerate(doc):
        arr = np.asarray(line, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ConfigError(f"polyline {i} must be a list of [y, x] pairs")
        out.append(arr)
    return out, l_value


def load_paths(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"path file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid paths JSON: {err}") from err
    return parse_paths_document(doc)


# -- run configuration -------------------------------------------------------

def _check_keys(doc: dict, allowed, where: str):
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


_TOP_KEYS = ("stroke_steps", "pixel_steps", "lr_strokes", "lr_pixels",
             "n_strokes", "canvas", "pixel_target_side", "seed", "init",
             "render", "loss", "pixel_loss", "preview_every",
             "content_image", "style_image")
_INIT_KEYS = ("method", "width_factor", "compactness", "iters")
_RENDER_KEYS = ("samples", "neighbors", "t_sigmoid", "t_softmax",
                "background", "coarse_factor")
_LOSS_KEYS = ("mse", "content", "style", "tv", "projection",
              "content_layers", "style_layers", "style_layer_weights",
              "projection_range")


def _parse_loss(doc: dict) -> losses.LossSpec:
    _check_keys(doc, _LOSS_KEYS, "loss")
    kwargs = dict(doc)
    for key in ("content_layers", "style_layers", "style_layer_weights"):
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = tuple(kwargs[key])
    return losses.LossSpec(**kwargs)


def parse_config(doc: dict) -> optim.FitConfig:
    """Build a FitConfig from a JSON document, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "config")
    kwargs = {}
    for key in ("stroke_steps", "pixel_steps", "lr_strokes", "lr_pixels",
                "n_strokes", "pixel_target_side", "seed", "preview_every"):
        if key in doc:
            kwargs[key] = doc[key]
    if "canvas" in doc:
        _check_keys(doc["canvas"], ("height", "width"), "canvas")
        kwargs["canvas_h"] = doc["canvas"].get("height", 256)
        kwargs["canvas_w"] = doc["canvas"].get("width", 256)
    if "init" in doc:
        _check_keys(doc["init"], _INIT_KEYS, "init")
        sub = doc["init"]
        if "method" in sub:
            kwargs["init_method"] = sub["method"]
        if "width_factor" in sub:
            kwargs["init_width_factor"] = sub["width_factor"]
        if "compactness" in sub:
            kwargs["slic_compactness"] = sub["compactness"]
        if "iters" in sub:
            kwargs["slic_iters"] = sub["iters"]
    if "render" in doc:
        _check_keys(doc["render"], _RENDER_KEYS, "render")
        sub = dict(doc["render"])
        if "background" in sub:
            sub["background"] = tuple(sub["background"])
        kwargs["render"] = renderer.RenderParams(**sub)
    if "loss" in doc:
        kwargs["loss"] = _parse_loss(doc["loss"])
    if "pixel_loss" in doc:
        kwargs["pixel_loss"] = _parse_loss(doc["pixel_loss"])
    try:
        return optim.FitConfig(**kwargs)
    except TypeError as err:
        raise ConfigError(f"invalid config: {err}") from err


def load_config(path) -> tuple:
    """Load a config file; returns (FitConfig, raw document)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid config JSON: {err}") from err
    return parse_config(doc), doc


def config_with_overrides(config: optim.FitConfig, **overrides) -> optim.FitConfig:
    """Apply non-None keyword overrides on top of a parsed config."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    if not changes:
        return config
    try:
        return dataclasses.replace(config, **changes)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid override: {err}") from err
