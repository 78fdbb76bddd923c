"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every array that flows through the networks and losses is a :class:`Tensor`
wrapping a numpy float64 buffer. Ops record a backward closure on their
output when any input requires gradients; ``Tensor.backward()`` walks the
tape in reverse topological order and accumulates into ``.grad`` buffers.
Graphs are per-forward-pass and are released when the loss goes out of
scope (or eagerly with ``backward(free_graph=True)``).

conv2d keeps a channels-first im2col workspace per thread so the hot
training loop spends its time in BLAS, not in allocation.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an op's shape contract."""


class ContractError(ValueError):
    """A non-shape precondition of an op was violated."""


_grad_enabled = threading.local()


def _taping() -> bool:
    return getattr(_grad_enabled, "on", True)


class no_grad:
    """Context manager that suppresses tape construction."""

    def __enter__(self):
        self._prev = _taping()
        _grad_enabled.on = False

    def __exit__(self, *exc):
        _grad_enabled.on = self._prev
        return False


class Tensor:
    """N-dimensional float64 array, optionally tracked for autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        """Allocate (or reset) the gradient buffer to zeros."""
        self.grad = np.zeros_like(self.data)

    def backward(self, free_graph: bool = False):
        """Accumulate d(self)/d(node) into every reachable requires-grad node.

        ``self`` must hold exactly one element. With ``free_graph`` the tape
        is dropped eagerly; otherwise a second backward over the same graph
        is possible (after clearing gradients).
        """
        if self.data.size != 1:
            raise ContractError(f"backward() requires a one-element tensor, got shape {self.shape}")
        order = _toposort(self)
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if free_graph:
                node._backward = None
                node._parents = ()

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def abs(self):
        return absolute(self)

    def sum(self, axes=None, keepdims=False):
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce_mean(self, axes, keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(node: Tensor, g: np.ndarray):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = g.copy()
    else:
        node.grad += g


def _node(data: np.ndarray, parents: tuple[Tensor, ...], op: str, backward) -> Tensor:
    out = Tensor(data)
    if _taping() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` over the axes broadcasting introduced."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if squeezed:
        g = g.sum(axis=squeezed, keepdims=True)
    return g


def _check_broadcast(a: tuple[int, ...], b: tuple[int, ...]):
    for x, y in zip(reversed(a), reversed(b)):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"shapes {a} and {b} are not broadcast-compatible")


# -- elementwise ops --------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _node(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), "mul", backward)


def scalar_mul(a, s: float) -> Tensor:
    a = _lift(a)
    s = float(s)

    def backward(g):
        _accumulate(a, g * s)

    return _node(a.data * s, (a,), "scalar_mul", backward)


def relu(a) -> Tensor:
    a = _lift(a)
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0  # subgradient 0 at the kink

    def backward(g):
        _accumulate(a, g * mask)

    return _node(out, (a,), "relu", backward)


def sigmoid(a) -> Tensor:
    a = _lift(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return _node(out, (a,), "sigmoid", backward)


def absolute(a) -> Tensor:
    a = _lift(a)
    sign = np.sign(a.data)  # 0 at the kink

    def backward(g):
        _accumulate(a, g * sign)

    return _node(np.abs(a.data), (a,), "abs", backward)


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out)

    return _node(out, (a,), "exp", backward)


def log(a) -> Tensor:
    a = _lift(a)

    def backward(g):
        _accumulate(a, g / a.data)

    return _node(np.log(a.data), (a,), "log", backward)


def sqrt(a) -> Tensor:
    """Elementwise square root with subgradient 0 at x = 0."""
    a = _lift(a)
    out = np.sqrt(a.data)
    safe = np.where(out > 0.0, out, 1.0)
    scale = np.where(out > 0.0, 0.5 / safe, 0.0)

    def backward(g):
        _accumulate(a, g * scale)

    return _node(out, (a,), "sqrt", backward)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), "matmul", backward)


def transpose2d(a) -> Tensor:
    a = _lift(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose2d expects a rank-2 tensor, got {a.shape}")

    def backward(g):
        _accumulate(a, np.ascontiguousarray(g.T))

    return _node(np.ascontiguousarray(a.data.T), (a,), "transpose2d", backward)


# -- shape ops ---------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elements) to {shape}")

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), "reshape", backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of an empty sequence")
    rank = tensors[0].ndim
    axis = axis % rank if rank else 0
    for t in tensors[1:]:
        if t.ndim != rank:
            raise ShapeError("concat operands must share rank")
        for ax in range(rank):
            if ax != axis and t.shape[ax] != tensors[0].shape[ax]:
                raise ShapeError(
                    f"concat extents differ off axis {axis}: {tensors[0].shape} vs {t.shape}"
                )
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", backward)


# -- reductions --------------------------------------------------------------


def _norm_axes(axes, ndim) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce_sum(a, axes=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(axes, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(gg, a.shape).copy())

    return _node(out, (a,), "sum", backward)


def reduce_mean(a, axes=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axes = _norm_axes(axes, a.ndim)
    count = math.prod(a.shape[ax] for ax in axes) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims) if axes else a.data.copy()

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axes)
        _accumulate(a, np.broadcast_to(gg / count, a.shape).copy())

    return _node(out, (a,), "mean", backward)


def global_avg_pool(a) -> Tensor:
    """Per-channel spatial mean of an NCHW map, returned as (N, C)."""
    a = _lift(a)
    if a.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got {a.shape}")
    n, c, h, w = a.shape

    def backward(g):
        _accumulate(a, np.broadcast_to(g[:, :, None, None] / (h * w), a.shape).copy())

    return _node(a.data.mean(axis=(2, 3)), (a,), "global_avg_pool", backward)


def _reduce_extreme(a, axis, keepdims, kind: str) -> Tensor:
    a = _lift(a)
    axis = _norm_axes(axis, a.ndim)[0]
    fn = np.max if kind == "max" else np.min
    argfn = np.argmax if kind == "max" else np.argmin
    out = fn(a.data, axis=axis, keepdims=keepdims)
    idx = argfn(a.data, axis=axis)  # first extreme wins ties

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(idx, axis), gg, axis=axis)
        _accumulate(a, buf)

    return _node(out, (a,), f"reduce_{kind}", backward)


def reduce_max(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max over one axis; gradient routes to the first maximal entry."""
    return _reduce_extreme(a, axis, keepdims, "max")


def reduce_min(a, axis: int, keepdims: bool = False) -> Tensor:
    """Min over one axis; gradient routes to the first minimal entry."""
    return _reduce_extreme(a, axis, keepdims, "min")


# -- convolution -------------------------------------------------------------

_workspaces = threading.local()


def _workspace(shape: tuple[int, ...]) -> np.ndarray:
    """Reusable scratch buffer; never capture one in a backward closure."""
    pool = getattr(_workspaces, "pool", None)
    if pool is None:
        pool = _workspaces.pool = {}
    buf = pool.get(shape)
    if buf is None:
        buf = pool[shape] = np.empty(shape)
    return buf


def _pad_cnhw(x_nchw: np.ndarray, pad_h: int, pad_w: int) -> np.ndarray:
    """Transpose NCHW to channels-first (C,N,H,W) and zero-pad spatially."""
    n, c, h, w = x_nchw.shape
    out = np.zeros((c, n, h + 2 * pad_h, w + 2 * pad_w))
    out[:, :, pad_h : pad_h + h, pad_w : pad_w + w] = x_nchw.transpose(1, 0, 2, 3)
    return out


def _corr_cnhw(xp: np.ndarray, wmat: np.ndarray, kh: int, kw: int, stride: int,
               oh: int, ow: int) -> np.ndarray:
    """Correlate a padded (C,N,Hp,Wp) buffer with (O, C*kh*kw) weights."""
    c, n = xp.shape[0], xp.shape[1]
    cols = _workspace((c, kh, kw, n, oh, ow))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i : i + (oh - 1) * stride + 1 : stride,
                               j : j + (ow - 1) * stride + 1 : stride]
    flat = cols.reshape(c * kh * kw, n * oh * ow)
    return (wmat @ flat).reshape(-1, n, oh, ow)


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW input with an OIHW kernel."""
    x, kernel = _lift(x), _lift(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = kernel.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {ci}")
    stride = int(stride)
    padding = int(padding)
    if stride < 1:
        raise ContractError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ContractError(f"conv2d padding must be >= 0, got {padding}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(
            f"conv2d output would be {oh}x{ow} for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )

    xp = _pad_cnhw(x.data, padding, padding)
    y = _corr_cnhw(xp, kernel.data.reshape(o, -1), kh, kw, stride, oh, ow)

    def backward(g):
        g_cn = np.ascontiguousarray(g.transpose(1, 0, 2, 3))  # (O,N,OH,OW)
        if kernel.requires_grad:
            cols = _workspace((c, kh, kw, n, oh, ow))
            for i in range(kh):
                for j in range(kw):
                    cols[:, i, j] = xp[:, :, i : i + (oh - 1) * stride + 1 : stride,
                                       j : j + (ow - 1) * stride + 1 : stride]
            dw = g_cn.reshape(o, -1) @ cols.reshape(c * kh * kw, -1).T
            _accumulate(kernel, dw.reshape(kernel.shape))
        if x.requires_grad:
            # transposed conv: dilate g by the stride, full-pad, correlate
            # with the channel-swapped, spatially flipped kernel
            hd = (oh - 1) * stride + 1
            wd = (ow - 1) * stride + 1
            gp = np.zeros((o, n, hd + 2 * (kh - 1), wd + 2 * (kw - 1)))
            gp[:, :, kh - 1 : kh - 1 + hd : stride, kw - 1 : kw - 1 + wd : stride] = g_cn
            wt = np.ascontiguousarray(kernel.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            full = _corr_cnhw(gp, wt.reshape(c, -1), kh, kw, 1, hd + kh - 1, wd + kw - 1)
            dxp = np.zeros((c, n, h + 2 * padding, w + 2 * padding))
            dxp[:, :, : hd + kh - 1, : wd + kw - 1] = full
            dx = dxp[:, :, padding : padding + h, padding : padding + w]
            _accumulate(x, np.ascontiguousarray(dx.transpose(1, 0, 2, 3)))

    y_nchw = np.ascontiguousarray(y.transpose(1, 0, 2, 3))
    return _node(y_nchw, (x, kernel), "conv2d", backward)


# -- pooling and resampling --------------------------------------------------


def adaptive_pool(x, out_h: int, out_w: int, mode: str = "avg") -> Tensor:
    """Adaptive average/max pooling of an NCHW map to out_h x out_w.

    Bin i along an extent E covers rows [floor(i*E/out), ceil((i+1)*E/out));
    adjacent bins may overlap when E is not divisible by the target size.
    Max routes its gradient to the first (row-major) maximal element.
    """
    x = _lift(x)
    if x.ndim != 4:
        raise ShapeError(f"adaptive_pool expects NCHW, got {x.shape}")
    if mode not in ("avg", "max"):
        raise ContractError(f"adaptive_pool mode must be 'avg' or 'max', got {mode!r}")
    n, c, h, w = x.shape
    out_h, out_w = int(out_h), int(out_w)
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"adaptive_pool output extents must be positive, got {out_h}x{out_w}")
    if out_h > h or out_w > w:
        raise ShapeError(f"adaptive_pool target {out_h}x{out_w} exceeds input {h}x{w}")

    def edges(extent, target):
        return [(math.floor(i * extent / target), math.ceil((i + 1) * extent / target))
                for i in range(target)]

    hbins, wbins = edges(h, out_h), edges(w, out_w)
    out = np.empty((n, c, out_h, out_w))
    argidx = np.empty((n, c, out_h, out_w), dtype=np.int64) if mode == "max" else None
    for i, (h0, h1) in enumerate(hbins):
        for j, (w0, w1) in enumerate(wbins):
            block = x.data[:, :, h0:h1, w0:w1]
            if mode == "avg":
                out[:, :, i, j] = block.mean(axis=(2, 3))
            else:
                flat = block.reshape(n, c, -1)
                idx = flat.argmax(axis=2)
                argidx[:, :, i, j] = idx
                out[:, :, i, j] = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        dx = np.zeros_like(x.data)
        for i, (h0, h1) in enumerate(hbins):
            for j, (w0, w1) in enumerate(wbins):
                if mode == "avg":
                    area = (h1 - h0) * (w1 - w0)
                    dx[:, :, h0:h1, w0:w1] += g[:, :, i, j, None, None] / area
                else:
                    buf = np.zeros((n, c, (h1 - h0) * (w1 - w0)))
                    np.put_along_axis(buf, argidx[:, :, i, j][:, :, None],
                                      g[:, :, i, j][:, :, None], axis=2)
                    dx[:, :, h0:h1, w0:w1] += buf.reshape(n, c, h1 - h0, w1 - w0)
        _accumulate(x, dx)

    return _node(out, (x,), f"adaptive_{mode}_pool", backward)


def _resample_matrix(extent: int, target: int, mode: str) -> np.ndarray:
    """Interpolation matrix (target x extent), align-corners-false convention."""
    m = np.zeros((target, extent))
    scale = extent / target
    for i in range(target):
        src = (i + 0.5) * scale - 0.5
        if mode == "nearest":
            m[i, min(extent - 1, max(0, math.floor(src + 0.5)))] = 1.0
            continue
        src = min(max(src, 0.0), extent - 1.0)
        lo = math.floor(src)
        hi = min(lo + 1, extent - 1)
        t = src - lo
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    return m


def _resize(x, out_h: int, out_w: int, mode: str) -> Tensor:
    x = _lift(x)
    if x.ndim != 4:
        raise ShapeError(f"resize expects NCHW, got {x.shape}")
    out_h, out_w = int(out_h), int(out_w)
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"resize target must be positive, got {out_h}x{out_w}")
    h, w = x.shape[2], x.shape[3]
    my = _resample_matrix(h, out_h, mode)
    mx = _resample_matrix(w, out_w, mode)

    def backward(g):
        _accumulate(x, my.T @ g @ mx)

    return _node(my @ x.data @ mx.T, (x,), f"resize_{mode}", backward)


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear NCHW resampling (align-corners-false)."""
    return _resize(x, out_h, out_w, "bilinear")


def resize_nearest(x, out_h: int, out_w: int) -> Tensor:
    """Nearest-neighbour NCHW resampling (align-corners-false)."""
    return _resize(x, out_h, out_w, "nearest")


def downsample_decimate(x, r: int) -> Tensor:
    """Box-filter decimation by rate r over r x r blocks, ragged edges truncated."""
    x = _lift(x)
    if x.ndim != 4:
        raise ShapeError(f"downsample_decimate expects NCHW, got {x.shape}")
    if r not in (2, 3, 4):
        raise ShapeError(f"decimation rate must be one of 2, 3, 4, got {r}")
    n, c, h, w = x.shape
    oh, ow = h // r, w // r
    if oh == 0 or ow == 0:
        raise ShapeError(f"input {h}x{w} too small for decimation rate {r}")
    blocks = x.data[:, :, : oh * r, : ow * r].reshape(n, c, oh, r, ow, r)
    out = blocks.mean(axis=(3, 5))

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, :, : oh * r, : ow * r] = np.repeat(np.repeat(g, r, axis=2), r, axis=3) / (r * r)
        _accumulate(x, dx)

    return _node(out, (x,), "decimate", backward)


# -- gradient checking --------------------------------------------------------


@dataclass
class GradCheckReport:
    """Result of comparing reverse-mode gradients with central differences."""

    op: str
    max_rel_error: float
    passed: bool
    probe_shape: str


def grad_check(name: str, fn, probes, tol: float = 1e-4, step: float = 1e-5,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Check d(sum(proj * fn(*inputs)))/d(inputs) against central differences.

    ``probes`` is a sequence of input tuples (numpy arrays). The output is
    scalarized through a fixed random projection so asymmetric gradient
    errors cannot cancel. Relative error uses max(1, |a|, |n|) as scale.
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    shapes = ""
    for probe in probes:
        arrays = [np.asarray(p, dtype=np.float64) for p in probe]
        shapes = shapes or "x".join(str(a.shape) for a in arrays)
        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = fn(*tensors)
        proj = rng.standard_normal(out.shape)
        loss = reduce_sum(mul(out, Tensor(proj)))
        for t in tensors:
            t.zero_grad()
        loss.backward()

        def scalar(args):
            with no_grad():
                return float(np.sum(fn(*[Tensor(a) for a in args]).data * proj))

        for k, base in enumerate(arrays):
            flat = base.reshape(-1)
            for idx in range(flat.size):
                keep = flat[idx]
                flat[idx] = keep + step
                up = scalar(arrays)
                flat[idx] = keep - step
                down = scalar(arrays)
                flat[idx] = keep
                numeric = (up - down) / (2.0 * step)
                analytic = tensors[k].grad.reshape(-1)[idx]
                scale = max(1.0, abs(analytic), abs(numeric))
                worst = max(worst, abs(analytic - numeric) / scale)
    return GradCheckReport(op=name, max_rel_error=worst, passed=worst <= tol, probe_shape=shapes)
