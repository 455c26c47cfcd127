"""Dense tensors with reverse-mode automatic differentiation.

Image batches use a channels-last layout (B, H, W, C) so that per-channel
reductions (global average pooling, channel gating) are contiguous.
Every primitive records a backward closure on its output; ``backward()``
on a scalar loss replays the recorded graph once in reverse topological
order and accumulates gradients into ``.grad`` (a plain ndarray of the
tensor's own shape).

Default precision is float32; pass float64 arrays (or ``dtype=``) for
finite-difference gradient checking, where float32 rounding drowns the
signal.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DataError, DimensionError

DEFAULT_DTYPE = np.float32

ArrayLike = Union[np.ndarray, float, int, Sequence]


def _as_array(data: ArrayLike, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in (np.float32, np.float64):
        return arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """A dense float array plus optional gradient bookkeeping.

    ``grad`` is populated (same shape as ``data``) for every tensor with
    ``requires_grad`` on the path to the loss after ``backward()``.
    Tensors are immutable after construction except for gradient
    accumulation; a gradient graph belongs to a single thread.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple["Tensor", ...] = ()
        self._backward_fn: Optional[Callable[[], None]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # accumulation never mutates in place, so aliasing an upstream grad is safe
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() without an explicit gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}"
            )
        tape = GradTape.trace(self)
        self.grad = grad
        for node in reversed(tape.nodes):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar over the module-level primitives
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __mul__(self, other):
        return multiply(self, _wrap(other, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def reshape(self, shape: tuple[int, ...]) -> "Tensor":
        return reshape(self, shape)


def _wrap(value, dtype) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=dtype))


class GradTape:
    """Topologically ordered record of executed primitives.

    ``nodes`` lists every gradient-requiring tensor reachable from the
    root, with each node's inputs strictly before it, so a single reverse
    sweep visits each node exactly once.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "GradTape":
        nodes: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                nodes.append(tensor)
                continue
            if id(tensor) in visited or not tensor.requires_grad:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            for parent in tensor._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        return cls(nodes)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result; records the closure only when a parent needs grad."""
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = parents
        out._backward_fn = backward_fn(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(out):
        def _bw():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))
        return _bw

    return _node(data, (a, b), backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting (channel gates broadcast here)."""
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"multiply: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(out):
        def _bw():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))
        return _bw

    return _node(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(out):
        def _bw():
            g = out.grad
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        return _bw

    return _node(data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    data = np.where(mask, x.data, 0)

    def backward(out):
        def _bw():
            if x.requires_grad:
                x._accumulate(out.grad * mask)
        return _bw

    return _node(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid exp overflow
    d = x.data
    data = np.empty_like(d)
    pos = d >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(out):
        def _bw():
            if x.requires_grad:
                x._accumulate(out.grad * data * (1.0 - data))
        return _bw

    return _node(data, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(dtype=x.dtype))

    def backward(out):
        def _bw():
            if x.requires_grad:
                x._accumulate(np.broadcast_to(out.grad, x.shape).astype(x.dtype, copy=False))
        return _bw

    return _node(data, (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)

    def backward(out):
        def _bw():
            if x.requires_grad:
                x._accumulate(out.grad.reshape(x.shape))
        return _bw

    return _node(data, (x,), backward)


# ---------------------------------------------------------------------------
# convolution / pooling


def _patch_view(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Read-only (B, OH, OW, kh, kw, C) sliding-window view, stride 1."""
    b, h, w, c = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    sb, sh, sw, sc = x.strides
    return np.lib.stride_tricks.as_strided(
        x, (b, oh, ow, kh, kw, c), (sb, sh, sw, sh, sw, sc), writeable=False
    )


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Valid cross-correlation, stride 1: (B,H,W,Cin) * (kh,kw,Cin,F) -> (B,H-kh+1,W-kw+1,F)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input/kernel, got {x.shape} and {kernel.shape}")
    b, h, w, cin = x.shape
    kh, kw, kcin, f = kernel.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: input channels {cin} != kernel channels {kcin}")
    if kh > h or kw > w:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    oh, ow = h - kh + 1, w - kw + 1
    cols = np.ascontiguousarray(_patch_view(x.data, kh, kw)).reshape(b * oh * ow, kh * kw * cin)
    data = (cols @ kernel.data.reshape(kh * kw * cin, f)).reshape(b, oh, ow, f)

    def backward(out):
        def _bw():
            g = out.grad.reshape(b * oh * ow, f)
            if kernel.requires_grad:
                kernel._accumulate((cols.T @ g).reshape(kernel.shape))
            if x.requires_grad:
                gcols = (g @ kernel.data.reshape(kh * kw * cin, f).T).reshape(b, oh, ow, kh, kw, cin)
                dx = np.zeros_like(x.data)
                for i in range(kh):
                    for j in range(kw):
                        dx[:, i:i + oh, j:j + ow, :] += gcols[:, :, :, i, j, :]
                x._accumulate(dx)
        return _bw

    return _node(data, (x, kernel), backward)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped.

    Backward routes each window's gradient to its first maximal element in
    row-major order, so tie handling is deterministic.
    """
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects a 4-D input, got {x.shape}")
    b, h, w, c = x.shape
    if h < 2 or w < 2:
        raise DimensionError(f"maxpool2d needs spatial extents >= 2, got {h}x{w}")
    oh, ow = h // 2, w // 2
    win = x.data[:, : 2 * oh, : 2 * ow, :].reshape(b, oh, 2, ow, 2, c)
    # window cells flattened in (dy, dx) row-major order so argmax picks the first max
    flat = win.transpose(0, 1, 3, 5, 2, 4).reshape(b, oh, ow, c, 4)
    idx = flat.argmax(axis=-1)
    data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(out):
        def _bw():
            if not x.requires_grad:
                return
            gwin = np.zeros_like(flat)
            np.put_along_axis(gwin, idx[..., None], out.grad[..., None], axis=-1)
            gwin = gwin.reshape(b, oh, ow, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
            dx = np.zeros_like(x.data)
            dx[:, : 2 * oh, : 2 * ow, :] = gwin.reshape(b, 2 * oh, 2 * ow, c)
            x._accumulate(dx)
        return _bw

    return _node(data, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: (B,H,W,C) -> (B,C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects a 4-D input, got {x.shape}")
    b, h, w, c = x.shape
    data = x.data.mean(axis=(1, 2))

    def backward(out):
        def _bw():
            if x.requires_grad:
                g = out.grad[:, None, None, :] / np.asarray(h * w, dtype=x.dtype)
                x._accumulate(np.broadcast_to(g, x.shape).astype(x.dtype, copy=False))
        return _bw

    return _node(data, (x,), backward)


# ---------------------------------------------------------------------------
# normalization / regularization / classification


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    *,
    training: bool,
    running_mean: Optional[np.ndarray] = None,
    running_var: Optional[np.ndarray] = None,
    momentum: float = 0.99,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize over all axes but the last, then scale/shift per feature.

    Training mode uses batch statistics (and folds them into the running
    arrays in place); inference mode requires running statistics. The
    training backward differentiates through the batch statistics.
    """
    if x.ndim < 2:
        raise DimensionError(f"batch_norm expects at least 2-D input, got {x.shape}")
    feat = x.shape[-1]
    if gamma.shape != (feat,) or beta.shape != (feat,):
        raise DimensionError(
            f"batch_norm: scale/shift shapes {gamma.shape}/{beta.shape} do not match {feat} features"
        )
    axes = tuple(range(x.ndim - 1))
    m = int(np.prod([x.shape[i] for i in axes]))
    if m < 1:
        raise DimensionError("batch_norm needs a non-empty batch")

    if training:
        mu = x.data.mean(axis=axes)
        xc = x.data - mu
        var = np.mean(xc * xc, axis=axes)
        if running_mean is not None:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu.astype(running_mean.dtype)
        if running_var is not None:
            running_var *= momentum
            running_var += (1.0 - momentum) * var.astype(running_var.dtype)
    else:
        if running_mean is None or running_var is None:
            raise DataError("batch_norm inference mode requires running statistics")
        mu = running_mean.astype(x.dtype, copy=False)
        xc = x.data - mu
        var = running_var.astype(x.dtype, copy=False)

    ivar = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * ivar
    data = gamma.data * xhat + beta.data

    def backward(out):
        def _bw():
            g = out.grad
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=axes))
            if gamma.requires_grad:
                gamma._accumulate((g * xhat).sum(axis=axes))
            if not x.requires_grad:
                return
            dxhat = g * gamma.data
            if training:
                dvar = (dxhat * xc).sum(axis=axes) * (-0.5) * ivar ** 3
                dmu = -(dxhat.sum(axis=axes)) * ivar
                dx = dxhat * ivar + (2.0 / m) * dvar * xc + dmu / m
            else:
                dx = dxhat * ivar
            x._accumulate(dx.astype(x.dtype, copy=False))
        return _bw

    return _node(data, (x, gamma, beta), backward)


def dropout(x: Tensor, rate: float, *, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: keep-probability scaling at training time, identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = np.asarray(1.0 - rate, dtype=x.dtype)
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / keep

    def backward(out):
        def _bw():
            if x.requires_grad:
                x._accumulate(out.grad * mask)
        return _bw

    return _node(x.data * mask, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(out):
        def _bw():
            if x.requires_grad:
                g = out.grad
                dot = (g * data).sum(axis=-1, keepdims=True)
                x._accumulate(data * (g - dot))
        return _bw

    return _node(data, (x,), backward)


PROB_FLOOR = 1e-12


def cross_entropy(probs: Tensor, targets: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean categorical cross-entropy of probability rows against one-hot targets.

    Rows must already be normalized (softmax output); probabilities are
    floored at 1e-12 before the log so saturated rows stay finite.
    """
    y = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    p = probs.data
    if p.ndim != 2 or y.shape != p.shape:
        raise DimensionError(f"cross_entropy: probabilities {p.shape} and targets {y.shape} must match 2-D")
    row_sums = p.sum(axis=-1)
    if np.any(np.abs(row_sums - 1.0) > 1e-3) or np.any(p < -1e-6):
        raise DataError("cross_entropy expects normalized probability rows")
    n = p.shape[0]
    safe = np.maximum(p, np.asarray(PROB_FLOOR, dtype=p.dtype))
    data = np.asarray(-(y * np.log(safe)).sum() / n, dtype=p.dtype).reshape(())

    def backward(out):
        def _bw():
            if probs.requires_grad:
                # clipped entries get no gradient
                live = p >= PROB_FLOOR
                dp = np.where(live, -y / safe, 0.0) * (out.grad / n)
                probs._accumulate(dp.astype(p.dtype, copy=False))
        return _bw

    return _node(data, (probs,), backward)


def one_hot(labels: np.ndarray, num_classes: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    labels = np.asarray(labels)
    bad = (labels < 0) | (labels >= num_classes)
    if bad.any():
        idx = int(np.argmax(bad))
        raise DataError(f"label {int(labels[idx])} at position {idx} out of range for {num_classes} classes")
    return np.eye(num_classes, dtype=dtype)[labels]
