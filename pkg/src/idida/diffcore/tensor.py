"""Dense float64 tensors with reverse-mode differentiation.

Every primitive builds an output :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. Shapes are explicit:
apart from scalar-times-tensor there is no implicit broadcasting, and shape
mismatches raise :class:`ShapeError` naming the operation.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    """Raised when operand shapes do not fit an operation."""


def _shape_error(op: str, *shapes) -> ShapeError:
    joined = " and ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{op}: incompatible shapes {joined}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: BackwardFn | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar; all routed through the explicit-shape primitives
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        if isinstance(other, Tensor) and other.size == 1 and self.size != 1:
            return scale(self, other)
        return mul(self, _as_tensor(other, self))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        return Tensor(np.full(like.shape, float(x)))
    return Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, op=op)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------- backward


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every reachable tensor that requires gradients.

    Leaf gradients accumulate across calls until cleared; intermediate
    gradients are overwritten.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("add", a.shape, b.shape)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("sub", a.shape, b.shape)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def mask_mul(x: Tensor, mask) -> Tensor:
    """Multiply by a constant mask of the same shape (no gradient to the mask)."""
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != x.shape:
        raise _shape_error("mask_mul", x.shape, m.shape)
    return _make(x.data * m, (x,), lambda g: (g * m,), "mask_mul")


def scale(x: Tensor, c) -> Tensor:
    """Scalar times tensor; ``c`` is a float or a one-element tensor."""
    if isinstance(c, Tensor):
        if c.size != 1:
            raise _shape_error("scale", x.shape, c.shape)
        cv = float(c.data.reshape(()))
        xd = x.data

        def bw(g):
            return g * cv, np.full(c.shape, float(np.sum(g * xd)))

        return _make(xd * cv, (x, c), bw, "scale")
    cv = float(c)
    return _make(x.data * cv, (x,), lambda g: (g * cv,), "scale")


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _make(x.data + float(c), (x,), lambda g: (g,), "add_scalar")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))

    def bw(g):
        s = np.empty_like(xd)
        pos = xd >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
        e = np.exp(xd[~pos])
        s[~pos] = e / (1.0 + e)
        return (g * s,)

    return _make(out, (x,), bw, "softplus")


# ---------------------------------------------------------------- linear algebra / layout


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), bw, "matmul")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise _shape_error("transpose", x.shape)
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise _shape_error("reshape", old, tuple(shape)) from exc
    return _make(out, (x,), lambda g: (g.reshape(old),), "reshape")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along the last axis; all leading dimensions must agree."""
    if not xs:
        raise ShapeError("concat: empty input list")
    if axis not in (-1, xs[0].ndim - 1):
        raise ShapeError("concat: only the last axis is supported")
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.shape[:-1] != lead:
            raise _shape_error("concat", xs[0].shape, x.shape)
    widths = [x.shape[-1] for x in xs]
    cuts = np.cumsum(widths)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, cuts, axis=-1))

    return _make(np.concatenate([x.data for x in xs], axis=-1), tuple(xs), bw, "concat")


def stack_scalars(xs: Sequence[Tensor]) -> Tensor:
    """Stack one-element tensors into a vector."""
    if not xs:
        raise ShapeError("stack_scalars: empty input list")
    for x in xs:
        if x.size != 1:
            raise _shape_error("stack_scalars", x.shape)
    shapes = [x.shape for x in xs]
    data = np.array([float(x.data.reshape(())) for x in xs])

    def bw(g):
        return tuple(np.full(s, g[i]) for i, s in enumerate(shapes))

    return _make(data, tuple(xs), bw, "stack_scalars")


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows ``x[idx]`` of a 1-D or 2-D tensor; repeated indices allowed."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: index must be 1-D, got shape {idx.shape}")
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather_rows: index out of range for {n} rows")
    shape = x.shape

    def bw(g):
        return (scatter_add_rows(g, idx, shape[0]).reshape(shape),)

    return _make(x.data[idx], (x,), bw, "gather_rows")


def scatter_add_rows(values: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n`` buckets given by ``idx`` (numpy helper)."""
    if values.ndim == 1:
        return np.bincount(idx, weights=values, minlength=n).astype(np.float64)
    flat = values.reshape(values.shape[0], -1)
    m = flat.shape[0]
    onehot = sparse.csr_matrix((np.ones(m), (idx, np.arange(m))), shape=(n, m))
    return np.asarray(onehot @ flat).reshape((n,) + values.shape[1:])


def add_row(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d vector to every row of an n-by-d matrix."""
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise _shape_error("add_row", x.shape, b.shape)
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_row")


def mul_row(x: Tensor, v: Tensor) -> Tensor:
    """Multiply every row of an n-by-d matrix element-wise by a length-d vector."""
    if x.ndim != 2 or v.ndim != 1 or x.shape[1] != v.shape[0]:
        raise _shape_error("mul_row", x.shape, v.shape)
    xd, vd = x.data, v.data
    return _make(xd * vd, (x, v), lambda g: (g * vd, np.sum(g * xd, axis=0)), "mul_row")


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row i of an n-by-d matrix by ``w[i]``."""
    if x.ndim != 2 or w.ndim != 1 or x.shape[0] != w.shape[0]:
        raise _shape_error("scale_rows", x.shape, w.shape)
    xd, wd = x.data, w.data
    return _make(xd * wd[:, None], (x, w), lambda g: (g * wd[:, None], np.sum(g * xd, axis=1)), "scale_rows")


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner products of two n-by-d matrices."""
    if a.ndim != 2 or a.shape != b.shape:
        raise _shape_error("row_dot", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = np.einsum("ij,ij->i", ad, bd)
    return _make(out, (a, b), lambda g: (g[:, None] * bd, g[:, None] * ad), "row_dot")


# ---------------------------------------------------------------- reductions


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    if axis is None:
        n = x.size
        return _make(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),), "mean")
    if x.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"mean: axis {axis} invalid for shape {shape}")
    n = shape[axis]

    def bw(g):
        ge = g[None, :] if axis == 0 else g[:, None]
        return (np.broadcast_to(ge / n, shape).copy(),)

    return _make(x.data.mean(axis=axis), (x,), bw, "mean")


def variance(x: Tensor) -> Tensor:
    """Population variance over all elements."""
    if x.size == 0:
        raise ShapeError("variance: empty tensor")
    n = x.size
    # shifting by one element keeps constant inputs exactly at zero variance
    shifted = x.data - x.data.flat[0]
    centered = shifted - shifted.mean()
    out = np.array(np.mean(centered * centered))
    return _make(out, (x,), lambda g: (float(g) * 2.0 * centered / n,), "variance")


def variance_of_scalars(xs: Sequence[Tensor]) -> Tensor:
    if len(xs) == 0:
        raise ValueError("variance_of_scalars: empty list")
    return variance(stack_scalars(list(xs)))


# ---------------------------------------------------------------- normalisers


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (vector, or each row of a matrix)."""
    if x.ndim not in (1, 2):
        raise _shape_error("softmax", x.shape)
    if x.shape[-1] == 0:
        raise ShapeError("softmax: empty row")
    xd = x.data
    z = np.exp(xd - xd.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


softmax_rows = softmax


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalisation of an n-by-d matrix with affine gain/bias."""
    if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise _shape_error("layer_norm", x.shape, gain.shape, bias.shape)
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=1, keepdims=True) - xhat * np.mean(gh * xhat, axis=1, keepdims=True))
        return gx, np.sum(g * xhat, axis=0), np.sum(g, axis=0)

    return _make(xhat * gd + bias.data, (x, gain, bias), bw, "layer_norm")


# ---------------------------------------------------------------- ragged segments


class Segments:
    """Sorted segment ids over ``num`` segments, precomputed for segment ops."""

    __slots__ = ("ids", "num", "starts", "nonempty", "counts")

    def __init__(self, ids, num: int):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ShapeError("Segments: ids must be 1-D")
        if ids.size and (np.any(np.diff(ids) < 0) or ids[0] < 0 or ids[-1] >= num):
            raise ValueError("Segments: ids must be sorted and within [0, num)")
        self.ids = ids
        self.num = int(num)
        self.counts = np.bincount(ids, minlength=num)
        self.nonempty = np.flatnonzero(self.counts)
        self.starts = np.searchsorted(ids, self.nonempty)


def segment_sum(x: Tensor, seg: Segments) -> Tensor:
    """Sum rows of ``x`` sharing a segment id; empty segments yield zeros."""
    if x.shape[0] != seg.ids.size:
        raise _shape_error("segment_sum", x.shape, seg.ids.shape)
    out = np.zeros((seg.num,) + x.shape[1:])
    if seg.ids.size:
        out[seg.nonempty] = np.add.reduceat(x.data, seg.starts, axis=0)
    ids = seg.ids
    return _make(out, (x,), lambda g: (g[ids],), "segment_sum")


def segment_softmax(scores: Tensor, seg: Segments) -> Tensor:
    """Softmax of a 1-D score vector within each segment."""
    if scores.ndim != 1 or scores.shape[0] != seg.ids.size:
        raise _shape_error("segment_softmax", scores.shape, seg.ids.shape)
    if seg.ids.size == 0:
        raise ShapeError("segment_softmax: empty row")
    sd = scores.data
    mx = np.maximum.reduceat(sd, seg.starts)
    full_mx = np.empty(seg.num)
    full_mx[seg.nonempty] = mx
    z = np.exp(sd - full_mx[seg.ids])
    denom = np.add.reduceat(z, seg.starts)
    full_den = np.ones(seg.num)
    full_den[seg.nonempty] = denom
    out = z / full_den[seg.ids]
    starts, nonempty, ids, num = seg.starts, seg.nonempty, seg.ids, seg.num

    def bw(g):
        dots = np.zeros(num)
        dots[nonempty] = np.add.reduceat(g * out, starts)
        return (out * (g - dots[ids]),)

    return _make(out, (scores,), bw, "segment_softmax")


# ---------------------------------------------------------------- losses


def _stable_sigmoid(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    """sigmoid(x) given ``e = exp(-|x|)``."""
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def _check_binary(y: np.ndarray) -> None:
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValueError("bce_with_logits: binary targets must be 0 or 1")


def bce_with_logits_terms(logits: Tensor, targets) -> Tensor:
    """Per-element binary cross-entropy ``softplus(x) - y*x`` for labels in {0, 1}."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise _shape_error("bce_with_logits", logits.shape, y.shape)
    _check_binary(y)
    xd = logits.data
    e = np.exp(-np.abs(xd))
    out = np.maximum(xd, 0.0) + np.log1p(e) - y * xd
    return _make(out, (logits,), lambda g: (g * (_stable_sigmoid(xd, e) - y),), "bce_terms")


def _gate_points(c: np.ndarray, scale: float, interpolate: bool, tol: float):
    """Evaluation points for the gated losses plus the map back to every gate.

    Returns ``(points, W, inv)``: either ``out = W @ f(points)`` for a
    barycentric Chebyshev interpolant on ``[min c, max c]``, or, when ``W`` is
    None, the exact values ``out = f(points)[inv]`` at the distinct gates.
    The per-gate loss is analytic in the gate away from ``c = 0``, so for
    positive gates the interpolation error decays like ``rho**-M`` with the
    Bernstein ellipse parameter ``rho`` set by the distance to zero.
    """
    uniq, inv = np.unique(c, return_inverse=True)
    a, b = float(uniq[0]), float(uniq[-1])
    if not interpolate or uniq.size < 3 or a <= 0.0:
        return uniq, None, inv
    m, h = 0.5 * (a + b), 0.5 * (b - a)
    r = m / h
    # shrink the ellipse a little so the bound holds off the singularity
    rho = 1.0 + 0.8 * (r + math.sqrt(r * r - 1.0) - 1.0)
    bound = 2.0 + 2.0 * scale * (m + 0.5 * h * (rho + 1.0 / rho))
    M = 2 + int(math.ceil(math.log(4.0 * bound / ((rho - 1.0) * tol)) / math.log(rho)))
    if M >= uniq.size:
        return uniq, None, inv
    k = np.arange(M)
    x = m + h * np.cos(np.pi * k / (M - 1))
    w = np.where(k % 2 == 0, 1.0, -1.0)
    w[0] *= 0.5
    w[-1] *= 0.5
    D = c[:, None] - x[None, :]
    hit = D == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        Q = w / D
    rows = hit.any(axis=1)
    Q[rows] = hit[rows].astype(np.float64)
    return x, Q / Q.sum(axis=1, keepdims=True), None


def gated_bce_means(logits: Tensor, gates, targets, chunk: int = 64, *, interpolate: bool = False, tol: float = 1e-13) -> Tensor:
    """``out[i] = mean_j bce(gates[i] * logits[j], targets[j])`` for constant gates.

    Equivalent to building the ``(S, n)`` matrix of gated logits and averaging
    its BCE terms per row, but streamed in row blocks so memory stays
    ``O(chunk * n)`` and each distinct gate is evaluated once. With
    ``interpolate`` and many distinct positive gates, the losses come from a
    Chebyshev interpolant in the gate whose degree is chosen so the absolute
    error stays below ``tol``; the backward pass is the exact derivative of
    that interpolant.
    """
    c = np.asarray(gates, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if logits.ndim != 1 or c.ndim != 1 or y.shape != logits.shape:
        raise _shape_error("gated_bce_means", logits.shape, c.shape, y.shape)
    _check_binary(y)
    ld = logits.data
    n = ld.shape[0]
    if n == 0:
        raise ShapeError("gated_bce_means: no samples")
    if c.size == 0:
        raise ShapeError("gated_bce_means: no gates")
    pts, W, inv = _gate_points(c, float(np.abs(ld).max()), interpolate, tol)
    vals = np.empty(pts.shape[0])
    for a in range(0, pts.shape[0], chunk):
        X = pts[a : a + chunk, None] * ld[None, :]
        e = np.exp(-np.abs(X))
        vals[a : a + chunk] = (np.maximum(X, 0.0) + np.log1p(e) - y * X).mean(axis=1)
    out = vals[inv] if W is None else W @ vals

    def bw(g):
        gp = np.bincount(inv, weights=g, minlength=pts.shape[0]) if W is None else W.T @ g
        gc = gp * pts
        acc = np.zeros(n)
        for a in range(0, pts.shape[0], chunk):
            X = pts[a : a + chunk, None] * ld[None, :]
            acc += gc[a : a + chunk] @ _stable_sigmoid(X, np.exp(-np.abs(X)))
        return ((acc - y * gc.sum()) / n,)

    return _make(out, (logits,), bw, "gated_bce_means")


def softmax_ce_terms(logits: Tensor, targets) -> Tensor:
    """Per-row multi-class cross-entropy via log-sum-exp."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or t.shape != (logits.shape[0],):
        raise _shape_error("softmax_cross_entropy", logits.shape, t.shape)
    c = logits.shape[1]
    if t.size and (t.min() < 0 or t.max() >= c):
        raise ValueError(f"softmax_cross_entropy: target index out of range [0, {c})")
    xd = logits.data
    mx = xd.max(axis=1, keepdims=True)
    z = np.exp(xd - mx)
    ssum = z.sum(axis=1, keepdims=True)
    rows = np.arange(t.size)
    out = (np.log(ssum) + mx)[:, 0] - xd[rows, t]
    p = z / ssum

    def bw(g):
        gr = p.copy()
        gr[rows, t] -= 1.0
        return (gr * g[:, None],)

    return _make(out, (logits,), bw, "softmax_ce_terms")


def cross_entropy_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy.

    A 1-D ``logits`` tensor is read as binary (one logit per sample, targets in
    {0, 1}); a 2-D tensor as multi-class with integer targets in ``[0, C)``.
    """
    if logits.ndim == 1:
        return mean(bce_with_logits_terms(logits, targets))
    return mean(softmax_ce_terms(logits, targets))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
