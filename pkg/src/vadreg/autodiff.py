"""Minimal dense-tensor engine with reverse-mode gradients.

Tensors carry float64 numpy arrays (C-contiguous, i.e. flat row-major
storage) and record the operation that produced them, so a scalar loss can
be differentiated back to every leaf that asked for a gradient. Only the
handful of operations the regression networks and the orthogonality
regularizer need are provided; there is deliberately no broadcasting zoo.

Tensors are treated as immutable once built. The one sanctioned exception
is an SGD update writing into a parameter leaf between graphs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not line up; the message names the offending axis."""


class GeometryError(ValueError):
    """A convolution geometry yields a non-positive output extent."""


class EmptyInputError(ValueError):
    """An operation received zero elements where at least one is required."""


def _as_f64(data) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    return arr


class Tensor:
    """Dense float64 array plus the bookkeeping reverse mode needs.

    ``data`` is the value, ``grad`` (filled by :func:`backward`) has the same
    shape, and ``op``/``inputs`` record how the tensor was produced. Leaves
    have ``op == "leaf"`` and no inputs.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "inputs", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 inputs: Sequence["Tensor"] = ()):
        self.data = _as_f64(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(t.requires_grad for t in inputs)
        self.op = op
        self.inputs = tuple(inputs)
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


class ComputeGraph:
    """Topologically ordered view of the operations behind a tensor.

    ``nodes`` lists every reachable tensor with all of a node's inputs
    appearing before the node itself, so a single reverse sweep applies the
    chain rule to each recorded operation exactly once.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputeGraph":
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
            for inp in node.inputs:
                if id(inp) not in seen:
                    stack.append((inp, False))
        return cls(order)


def backward(loss: Tensor, accumulate: bool = False) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    Unless ``accumulate`` is set, the gradients of every tensor in the graph
    are cleared first, so repeated calls on the same graph are idempotent.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    graph = ComputeGraph.from_root(loss)
    for node in graph.nodes:
        # interior grads are per-backward scratch; leaf grads persist only
        # when the caller opted into accumulation
        if node.inputs or not accumulate:
            node.grad = None
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(graph.nodes):
        if node._backward is not None and node.grad is not None and node.requires_grad:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise / shape ops
# ---------------------------------------------------------------------------

def _check_same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.shape != b.data.shape:
        for axis, (x, y) in enumerate(zip(a.data.shape, b.data.shape)):
            if x != y:
                raise ShapeError(f"{opname}: axis {axis} differs ({x} vs {y})")
        raise ShapeError(f"{opname}: rank differs ({a.data.shape} vs {b.data.shape})")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data, op="add", inputs=(a, b))

    def _bw(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data, op="sub", inputs=(a, b))

    def _bw(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    out._backward = _bw
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c, op="scale", inputs=(a,))

    def _bw(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * c)

    out._backward = _bw
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = Tensor(a.data.reshape(shape), op="reshape", inputs=(a,))

    def _bw(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    out._backward = _bw
    return out


def swap_leading_axes(a: Tensor) -> Tensor:
    """Transpose the first two axes (used to reorient filter-pair tensors)."""
    if a.data.ndim < 2:
        raise ShapeError(f"swap_leading_axes: need at least 2 axes, got {a.data.ndim}")
    out = Tensor(np.ascontiguousarray(a.data.swapaxes(0, 1)), op="swap_leading_axes", inputs=(a,))

    def _bw(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g.swapaxes(0, 1))

    out._backward = _bw
    return out


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is taken as 0."""
    out = Tensor(np.maximum(a.data, 0.0), op="relu", inputs=(a,))
    mask = a.data > 0.0

    def _bw(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g * mask)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _pad_pair(padding) -> tuple[int, int]:
    if isinstance(padding, (tuple, list)):
        ph, pw = int(padding[0]), int(padding[1])
    else:
        ph = pw = int(padding)
    if ph < 0 or pw < 0:
        raise GeometryError(f"padding must be non-negative, got {(ph, pw)}")
    return ph, pw


def conv_output_extent(extent: int, k: int, stride: int, pad: int) -> int:
    return (extent + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, s: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = xp[:, :, u:u + s * ho:s, v:v + s * wo:s]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(dcols: np.ndarray, n: int, c: int, h: int, w: int,
            kh: int, kw: int, s: int, ph: int, pw: int, ho: int, wo: int) -> np.ndarray:
    dxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    dcols = dcols.reshape(n, c, kh, kw, ho, wo)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u:u + s * ho:s, v:v + s * wo:s] += dcols[:, :, u, v]
    return dxp[:, :, ph:ph + h, pw:pw + w]


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding=0) -> Tensor:
    """Strided cross-correlation with zero padding.

    ``x`` is (C,H,W) or (N,C,H,W); ``w`` is (M,C,kh,kw). Output spatial
    extents follow floor((H + 2P - kh)/S) + 1. Gradients flow to both the
    input and the kernel, and the two roles may be played by the same
    tensor (the self-convolution of a kernel with itself relies on this).
    """
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must have 4 axes (M,C,kh,kw), got {w.data.ndim}")
    single = x.data.ndim == 3
    if x.data.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must have 3 or 4 axes, got {x.data.ndim}")
    xd = x.data[None] if single else x.data
    n, c, h, wid = xd.shape
    m, ck, kh, kw = w.data.shape
    if ck != c:
        raise ShapeError(f"conv2d: channel axis mismatch (input has {c}, kernel expects {ck})")
    s = int(stride)
    if s < 1:
        raise GeometryError(f"stride must be >= 1, got {s}")
    ph, pw = _pad_pair(padding)
    ho = conv_output_extent(h, kh, s, ph)
    wo = conv_output_extent(wid, kw, s, pw)
    if ho < 1 or wo < 1:
        raise GeometryError(
            f"conv2d: output extent {(ho, wo)} for input {(h, wid)}, kernel {(kh, kw)}, "
            f"stride {s}, padding {(ph, pw)}")

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    cols = _im2col(xp, kh, kw, s, ho, wo)                     # (N, C*kh*kw, ho*wo)
    wmat = w.data.reshape(m, c * kh * kw)
    out_data = np.matmul(wmat, cols).reshape(n, m, ho, wo)
    out = Tensor(out_data[0] if single else out_data, op="conv2d", inputs=(x, w))

    def _bw(g: np.ndarray) -> None:
        go = (g[None] if single else g).reshape(n, m, ho * wo)
        if w.requires_grad:
            dw = np.matmul(go, cols.transpose(0, 2, 1)).sum(axis=0)
            w.accumulate_grad(dw.reshape(w.data.shape))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, go)                     # (N, C*kh*kw, ho*wo)
            dx = _col2im(dcols, n, c, h, wid, kh, kw, s, ph, pw, ho, wo)
            x.accumulate_grad(dx[0] if single else dx)

    out._backward = _bw
    return out


def channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias to a (C,H,W) or (N,C,H,W) tensor."""
    if b.data.ndim != 1:
        raise ShapeError(f"channel_bias: bias must be 1-d, got {b.data.ndim} axes")
    chan_axis = x.data.ndim - 3
    if x.data.ndim not in (3, 4) or x.data.shape[chan_axis] != b.data.shape[0]:
        raise ShapeError(
            f"channel_bias: channel axis mismatch (input {x.data.shape}, bias {b.data.shape})")
    bshape = (-1, 1, 1)
    out = Tensor(x.data + b.data.reshape(bshape), op="channel_bias", inputs=(x, b))
    sum_axes = (1, 2) if x.data.ndim == 3 else (0, 2, 3)

    def _bw(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=sum_axes))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# dense / pooling / normalization
# ---------------------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: out[o] = b[o] + sum_f w[o,f] * x[f].

    Accepts a single feature vector (F,) or a batch (N,F).
    """
    if w.data.ndim != 2:
        raise ShapeError(f"linear: weight must be 2-d (O,F), got {w.data.ndim} axes")
    o, f = w.data.shape
    if b.data.shape != (o,):
        raise ShapeError(f"linear: bias shape {b.data.shape} does not match output extent {o}")
    single = x.data.ndim == 1
    if x.data.ndim not in (1, 2) or x.data.shape[-1] != f:
        raise ShapeError(
            f"linear: feature axis mismatch (input {x.data.shape}, weight expects {f})")
    xd = x.data[None] if single else x.data
    out_data = xd @ w.data.T + b.data
    out = Tensor(out_data[0] if single else out_data, op="linear", inputs=(x, w, b))

    def _bw(g: np.ndarray) -> None:
        go = g[None] if single else g
        if x.requires_grad:
            dx = go @ w.data
            x.accumulate_grad(dx[0] if single else dx)
        if w.requires_grad:
            w.accumulate_grad(go.T @ xd)
        if b.requires_grad:
            b.accumulate_grad(go.sum(axis=0))

    out._backward = _bw
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: (C,H,W) -> (C,), (N,C,H,W) -> (N,C)."""
    if x.data.ndim not in (3, 4):
        raise ShapeError(f"global_avg_pool: input must have 3 or 4 axes, got {x.data.ndim}")
    h, w = x.data.shape[-2:]
    out = Tensor(x.data.mean(axis=(-2, -1)), op="global_avg_pool", inputs=(x,))

    def _bw(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g[..., None, None], x.data.shape) / (h * w))

    out._backward = _bw
    return out


def spatial_subsample(x: Tensor, stride: int) -> Tensor:
    """Keep every ``stride``-th spatial position (parameter-free downsampling)."""
    s = int(stride)
    out = Tensor(np.ascontiguousarray(x.data[..., ::s, ::s]), op="spatial_subsample", inputs=(x,))

    def _bw(g: np.ndarray) -> None:
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            dx[..., ::s, ::s] = g
            x.accumulate_grad(dx)

    out._backward = _bw
    return out


def channel_pad(x: Tensor, extra: int) -> Tensor:
    """Append ``extra`` zero channels (identity shortcut across a width change)."""
    if extra < 0:
        raise ShapeError("channel_pad: extra must be non-negative")
    chan_axis = x.data.ndim - 3
    pad = [(0, 0)] * x.data.ndim
    pad[chan_axis] = (0, extra)
    out = Tensor(np.pad(x.data, pad), op="channel_pad", inputs=(x,))
    keep = x.data.shape[chan_axis]

    def _bw(g: np.ndarray) -> None:
        if x.requires_grad:
            sl = [slice(None)] * g.ndim
            sl[chan_axis] = slice(0, keep)
            x.accumulate_grad(g[tuple(sl)])

    out._backward = _bw
    return out


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: dict,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization with running statistics.

    ``state`` holds the mutable ``mean``/``var`` buffers (plain arrays, not
    part of the graph); training mode normalizes with batch statistics and
    updates the buffers, eval mode applies the stored affine transform.
    """
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    n, c = xd.shape[:2]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batch_norm: parameter shape mismatch for {c} channels")
    axes = (0, 2, 3)
    if training:
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        state["mean"] = (1 - momentum) * state["mean"] + momentum * mean
        state["var"] = (1 - momentum) * state["var"] + momentum * var
    else:
        mean = state["mean"]
        var = state["var"]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = Tensor(out_data[0] if single else out_data, op="batch_norm", inputs=(x, gamma, beta))

    def _bw(g: np.ndarray) -> None:
        go = g[None] if single else g
        if gamma.requires_grad:
            gamma.accumulate_grad((go * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate_grad(go.sum(axis=axes))
        if x.requires_grad:
            gs = go * gamma.data[None, :, None, None]
            if training:
                mean_gs = gs.mean(axis=axes)
                mean_gs_xhat = (gs * xhat).mean(axis=axes)
                dx = inv_std[None, :, None, None] * (
                    gs - mean_gs[None, :, None, None] - xhat * mean_gs_xhat[None, :, None, None])
            else:
                dx = gs * inv_std[None, :, None, None]
            x.accumulate_grad(dx[0] if single else dx)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """(1/N) * sum((pred - target)^2) over all elements."""
    _check_same_shape(pred, target, "mse_loss")
    n = pred.data.size
    if n == 0:
        raise EmptyInputError("mse_loss: empty input")
    diff = pred.data - target.data
    out = Tensor(np.asarray((diff * diff).sum() / n), op="mse_loss", inputs=(pred, target))

    def _bw(g: np.ndarray) -> None:
        coeff = 2.0 * float(g.reshape(())) / n
        if pred.requires_grad:
            pred.accumulate_grad(coeff * diff)
        if target.requires_grad:
            target.accumulate_grad(-coeff * diff)

    out._backward = _bw
    return out


def frobenius_sq(t: Tensor) -> Tensor:
    """Sum of squared entries (the squared Frobenius norm)."""
    out = Tensor(np.asarray((t.data * t.data).sum()), op="frobenius_sq", inputs=(t,))

    def _bw(g: np.ndarray) -> None:
        if t.requires_grad:
            t.accumulate_grad(2.0 * float(g.reshape(())) * t.data)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------

def finite_diff_check(f: Callable[[Tensor], Tensor], t: Tensor, step: float = 1e-5,
                      coords: Iterable[int] | None = None) -> float:
    """Compare the analytic gradient of ``f`` at ``t`` against central differences.

    Returns max over checked coordinates of |analytic - numeric| / max(1, |numeric|).
    ``coords`` restricts the check to a subset of flat indices (all by default).
    ``f`` must build a fresh graph from the tensor it is handed.
    """
    if step <= 0:
        raise ValueError("finite_diff_check: step must be positive")
    base = Tensor(t.data.copy(), requires_grad=True)
    backward(f(base))
    analytic = base.grad.reshape(-1).copy()
    flat = t.data.reshape(-1)
    indices = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in indices:
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        fp = f(Tensor(bumped.reshape(t.data.shape))).item()
        bumped[i] = flat[i] - step
        fm = f(Tensor(bumped.reshape(t.data.shape))).item()
        numeric = (fp - fm) / (2.0 * step)
        err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
