"""Reverse-mode gradient engine for the renderer and losses.

A small tape over float64 numpy arrays: just enough operations to express
Bezier sampling, the distance-field renderer, and every loss, with exactly
one backward pass per forward evaluation. Ops short-circuit to plain numpy
when no input requires gradients, so forward-only rendering pays only the
cost of thin wrappers.

Conventions that keep gradients finite everywhere:
  * sqrt uses a guarded backward (subgradient 0 at 0),
  * absolute uses sign (subgradient 0 at 0),
  * min over an axis routes the gradient to the first attaining index,
  * sigmoid/softmax are evaluated in numerically stable form.

Clamping of parameters is never part of the tape; it is applied as a
projection after each optimizer step.
"""

from __future__ import annotations

import numpy as np

from brushfit.errors import NonFiniteError

__all__ = [
    "Tensor", "constant", "variable", "add", "sum", "mean", "min_along",
    "relu", "maximum", "exp", "sqrt", "absolute", "sigmoid", "softmax",
    "gather", "matmul", "conv2d", "avg_pool2", "grad_render_loss",
    "grad_pixel_loss",
]


def _is_basic_key(key) -> bool:
    """True if an index expression uses only slices/ints/None/Ellipsis.

    Basic indexing never repeats elements, so the backward pass can add
    through a view; fancy indexing needs np.add.at.
    """
    items = key if isinstance(key, tuple) else (key,)
    return not any(isinstance(it, (np.ndarray, list)) for it in items)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # Defer all numpy binary ops to our reflected dunders.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        """Accumulate gradients of this (scalar) node into all leaves."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # -- arithmetic ----------------------------------------------------
    #
    # Binary ops only evaluate the gradient components their parents
    # actually need; constants (e.g. the coordinate grid) cost nothing on
    # the way back.

    def __add__(self, other):
        a, b = self, astensor(other)
        na, nb = a.requires_grad, b.requires_grad
        return _node(a.data + b.data, (a, b), lambda g: (
            _unbroadcast(g, a.data.shape) if na else None,
            _unbroadcast(g, b.data.shape) if nb else None))

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, astensor(other)
        na, nb = a.requires_grad, b.requires_grad
        return _node(a.data - b.data, (a, b), lambda g: (
            _unbroadcast(g, a.data.shape) if na else None,
            _unbroadcast(-g, b.data.shape) if nb else None))

    def __rsub__(self, other):
        return astensor(other).__sub__(self)

    def __mul__(self, other):
        a, b = self, astensor(other)
        na, nb = a.requires_grad, b.requires_grad
        return _node(a.data * b.data, (a, b), lambda g: (
            _unbroadcast(g * b.data, a.data.shape) if na else None,
            _unbroadcast(g * a.data, b.data.shape) if nb else None))

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, astensor(other)
        na, nb = a.requires_grad, b.requires_grad
        return _node(a.data / b.data, (a, b), lambda g: (
            _unbroadcast(g / b.data, a.data.shape) if na else None,
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            if nb else None))

    def __rtruediv__(self, other):
        return astensor(other).__truediv__(self)

    def __neg__(self):
        a = self
        return _node(-a.data, (a,), lambda g: (-g,))

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant exponents are supported")
        a, k = self, float(exponent)
        return _node(a.data ** k, (a,), lambda g: (g * k * a.data ** (k - 1.0),))

    def __getitem__(self, key):
        a = self

        def back(g):
            out = np.zeros_like(a.data)
            if _is_basic_key(key):
                out[key] += g
            else:
                np.add.at(out, key, g)
            return (out,)

        return _node(a.data[key], (a,), back)

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _node(a.data.reshape(shape), (a,),
                     lambda g: (g.reshape(a.data.shape),))

    @property
    def T(self):
        a = self
        return _node(a.data.T, (a,), lambda g: (g.T,))


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def variable(x) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def _node(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def _is_plain(*xs) -> bool:
    return not any(isinstance(x, Tensor) for x in xs)


# -- reductions and elementwise functions ------------------------------
#
# Each op accepts either ndarrays (returning ndarrays) or Tensors
# (returning graph nodes), so the renderer and losses are written once.

def add(a, b):
    if _is_plain(a, b):
        return a + b
    return astensor(a) + b


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    if _is_plain(x):
        return np.sum(x, axis=axis, keepdims=keepdims)
    a = x

    def back(g):
        # A read-only broadcast view is safe: gradients are only ever read
        # or replaced, never mutated in place.
        if axis is None:
            return (np.broadcast_to(g, a.data.shape),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def square_sum(x, axis=None, keepdims=False):
    """Fused (x * x).sum(axis): one backward multiply instead of three."""
    if _is_plain(x):
        return (x * x).sum(axis=axis, keepdims=keepdims)
    a = x

    def back(g):
        if axis is None:
            g2 = g
        else:
            g2 = g if keepdims else np.expand_dims(g, axis)
        return (2.0 * g2 * a.data,)

    return _node((a.data * a.data).sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(x, axis=None, keepdims=False):
    if _is_plain(x):
        return np.mean(x, axis=axis, keepdims=keepdims)
    if axis is None:
        size = x.data.size
    elif isinstance(axis, tuple):
        size = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        size = x.data.shape[axis]
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / size)


def min_along(x, axis):
    """Minimum over one axis; gradient flows to the first attaining index."""
    if _is_plain(x):
        return np.min(x, axis=axis)
    a = x
    idx = np.argmin(a.data, axis=axis)

    def back(g):
        out = np.zeros_like(a.data)
        np.put_along_axis(out, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _node(np.min(a.data, axis=axis), (a,), back)


def relu(x):
    if _is_plain(x):
        return np.maximum(x, 0.0)
    a = x
    mask = a.data > 0.0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def maximum(x, floor: float):
    """Elementwise max with a constant floor (used to guard normalizations)."""
    if _is_plain(x):
        return np.maximum(x, floor)
    a = x
    mask = a.data > floor
    return _node(np.maximum(a.data, floor), (a,), lambda g: (g * mask,))


def exp(x):
    if _is_plain(x):
        return np.exp(x)
    a = x
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def sqrt(x):
    """Square root with guarded backward: subgradient 0 at 0."""
    if _is_plain(x):
        return np.sqrt(x)
    a = x
    out = np.sqrt(a.data)

    def back(g):
        safe = np.where(out > 0.0, out, 1.0)
        return (np.where(out > 0.0, 0.5 * g / safe, 0.0),)

    return _node(out, (a,), back)


def absolute(x):
    if _is_plain(x):
        return np.abs(x)
    a = x
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    if _is_plain(x):
        return _sigmoid(np.asarray(x, dtype=np.float64))
    a = x
    out = _sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(x, axis=-1):
    if _is_plain(x):
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=axis, keepdims=True)
    a = x
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (a,), back)


def gather(x, idx):
    """Select rows of x along axis 0 with an integer index array.

    out[i0, i1, ...] = x[idx[i0, i1, ...], ...]; backward scatter-adds.
    The scatter runs as one bincount per trailing component, which is far
    faster than np.add.at for the renderer's index shapes.
    """
    idx = np.asarray(idx)
    if _is_plain(x):
        return x[idx]
    a = x
    n = a.data.shape[0]
    tail = a.data.shape[1:]

    def back(g):
        flat_idx = idx.reshape(-1)
        cols = int(np.prod(tail)) if tail else 1
        gf = g.reshape(flat_idx.size, cols)
        out = np.empty((n, cols))
        for j in range(cols):
            out[:, j] = np.bincount(flat_idx, weights=gf[:, j], minlength=n)
        return (out.reshape(a.data.shape),)

    return _node(a.data[idx], (a,), back)


def matmul(a, b):
    if _is_plain(a, b):
        return a @ b
    a, b = astensor(a), astensor(b)
    return _node(a.data @ b.data, (a, b), lambda g: (
        g @ b.data.T, a.data.T @ g))


def conv2d(x, kernel):
    """3x3 same-padding convolution of an (H, W, Cin) map. Stride 1.

    kernel has shape (kh, kw, Cin, Cout); output is (H, W, Cout).
    """
    plain = _is_plain(x, kernel)
    xt, kt = astensor(x), astensor(kernel)
    kh, kw, cin, cout = kt.data.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(xt.data, ((ph, ph), (pw, pw), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
    # windows: (H, W, Cin, kh, kw) -> contract against kernel (kh, kw, Cin, Cout)
    out = np.einsum("hwckl,klcd->hwd", windows, kt.data, optimize=True)
    if plain:
        return out

    def back(g):
        gk = np.einsum("hwckl,hwd->klcd", windows, g, optimize=True) \
            if kt.requires_grad else None
        gx = None
        if xt.requires_grad:
            gpad = np.zeros_like(padded)
            for di in range(kh):
                for dj in range(kw):
                    h, w = xt.data.shape[:2]
                    gpad[di:di + h, dj:dj + w] += g @ kt.data[di, dj].T
            gx = gpad[ph:ph + xt.data.shape[0], pw:pw + xt.data.shape[1]]
        return (gx, gk)

    return _node(out, (xt, kt), back)


def avg_pool2(x):
    """2x2 average pooling with stride 2; odd trailing rows/cols are cropped."""
    if _is_plain(x):
        h2, w2 = x.shape[0] // 2, x.shape[1] // 2
        return x[:h2 * 2, :w2 * 2].reshape(h2, 2, w2, 2, -1).mean(axis=(1, 3))
    a = x
    h, w, c = a.data.shape
    h2, w2 = h // 2, w // 2
    out = a.data[:h2 * 2, :w2 * 2].reshape(h2, 2, w2, 2, c).mean(axis=(1, 3))

    def back(g):
        gx = np.zeros_like(a.data)
        spread = np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25
        gx[:h2 * 2, :w2 * 2] = spread
        return (gx,)

    return _node(out, (a,), back)


# -- gradient entry points ---------------------------------------------

def _check_finite_canvas(canvas: np.ndarray, what: str):
    if np.isfinite(canvas).all():
        return
    bad = np.argwhere(~np.isfinite(canvas))[0]
    raise NonFiniteError(f"non-finite {what} at pixel ({bad[0]}, {bad[1]})",
                         pixel=(int(bad[0]), int(bad[1])))


def stroke_variables(strokes):
    """Leaf tensors for the four stroke parameter arrays."""
    return (variable(strokes.locations), variable(strokes.offsets),
            variable(strokes.widths), variable(strokes.colors))


def collect_param_gradient(loc, off, wid, col) -> np.ndarray:
    """Assemble leaf gradients into an (N, 12) matrix in canonical layout."""
    n = loc.data.shape[0]

    def g(t, shape):
        return t.grad if t.grad is not None else np.zeros(shape)

    return np.concatenate([
        g(loc, (n, 2)),
        g(off, (n, 3, 2)).reshape(n, 6),
        g(wid, (n,))[:, None],
        g(col, (n, 3)),
    ], axis=1)


def grad_render_loss(strokes, params, spec, refs, index=None):
    """Loss and d(loss)/d(stroke parameters) through renderer and losses.

    Returns (loss value, per-term dict, (N, 12) gradient). `refs` carries
    the reference images and feature extractor; `index` may be a
    prebuilt NearestStrokeIndex (rebuilt from the strokes otherwise).
    """
    from brushfit import renderer as _renderer
    from brushfit import losses as _losses

    if index is None:
        index = _renderer.build_nearest_index(strokes, params.neighbors,
                                              params.coarse_factor)
    loc, off, wid, col = stroke_variables(strokes)
    canvas = _renderer.render_graph(loc, off, wid, col, strokes.canvas_h,
                                    strokes.canvas_w, params, index.idcs)
    _check_finite_canvas(canvas.data, "rendered value")
    total, terms = _losses.evaluate(canvas, spec, refs,
                                    stroke_offsets=off,
                                    stroke_locations=strokes.locations)
    value = total.item()
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite loss {value}")
    total.backward()
    grad = collect_param_gradient(loc, off, wid, col)
    if not np.isfinite(grad).all():
        bad = int(np.argwhere(~np.isfinite(grad))[0][0])
        raise NonFiniteError("non-finite gradient", stroke=bad)
    return value, terms, grad


def grad_pixel_loss(canvas, spec, refs):
    """Loss and d(loss)/d(pixels) for the pixel refinement stage."""
    from brushfit import losses as _losses

    _check_finite_canvas(np.asarray(canvas), "input pixel")
    pix = variable(canvas)
    total, terms = _losses.evaluate(pix, spec, refs)
    value = total.item()
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite loss {value}")
    total.backward()
    grad = pix.grad if pix.grad is not None else np.zeros_like(pix.data)
    if not np.isfinite(grad).all():
        bad = np.argwhere(~np.isfinite(grad))[0]
        raise NonFiniteError("non-finite pixel gradient",
                             pixel=(int(bad[0]), int(bad[1])))
    return value, terms, grad
