"""Finite-difference verification of every differentiable primitive.

Central differences at float64 with h=1e-6 are compared against the
reverse-mode gradients on small random tensors. Inputs are nudged away
from kinks (relu at 0, pooling ties) because finite differences are
meaningless across them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .layers import SqueezeExcitation
from .tensor import Tensor

H_DEFAULT = 1e-6
TOLERANCE = 1e-4


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = H_DEFAULT) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float((diff / scale).max()) if diff.size else 0.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _check_op(inputs: list[np.ndarray], apply: Callable[..., Tensor], h: float) -> float:
    """Compare autodiff grads of sum(weights * op(inputs)) against finite differences."""
    tensors = [Tensor(a.astype(np.float64), requires_grad=True) for a in inputs]
    out = apply(*tensors)
    rng = np.random.default_rng(99)
    weights = rng.normal(size=out.shape).astype(np.float64)
    loss = T.sum_all(T.multiply(out, Tensor(weights)))
    loss.backward()
    worst = 0.0
    for pos, arr in enumerate(inputs):
        def scalar(a, pos=pos):
            args = [Tensor(inp.astype(np.float64)) for inp in inputs]
            args[pos] = Tensor(a)
            res = apply(*args)
            return float((res.data * weights).sum())

        fd = finite_difference(scalar, arr.astype(np.float64), h)
        worst = max(worst, relative_error(tensors[pos].grad, fd))
    return worst


def _spread(rng: np.random.Generator, shape, min_gap=1e-3) -> np.ndarray:
    """Random values with pairwise gaps, keeping argmax-style ops off their ties."""
    n = int(np.prod(shape))
    vals = rng.permutation(n).astype(np.float64) * (3.0 * min_gap) + rng.uniform(-0.5, 0.5)
    return vals.reshape(shape)


def check_matmul(h: float = H_DEFAULT) -> CheckResult:
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    return CheckResult("matmul", _check_op([a, b], T.matmul, h))


def check_conv2d(h: float = H_DEFAULT) -> CheckResult:
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 6, 6, 2))
    k = rng.normal(size=(3, 3, 2, 2))
    return CheckResult("conv2d", _check_op([x, k], T.conv2d, h))


def check_maxpool2d(h: float = H_DEFAULT) -> CheckResult:
    rng = np.random.default_rng(2)
    x = _spread(rng, (1, 4, 4, 2))
    return CheckResult("maxpool2d", _check_op([x], T.maxpool2d, h))


def check_global_avg_pool(h: float = H_DEFAULT) -> CheckResult:
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 4, 3))
    return CheckResult("global_avg_pool", _check_op([x], T.global_avg_pool, h))


def check_relu(h: float = H_DEFAULT) -> CheckResult:
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 7))
    x = np.where(np.abs(x) < 1e-2, x + 0.05, x)  # keep away from the kink
    return CheckResult("relu", _check_op([x], T.relu, h))


def check_sigmoid(h: float = H_DEFAULT) -> CheckResult:
    rng = np.random.default_rng(5)
    x = rng.normal(size=(5, 7)) * 3.0
    return CheckResult("sigmoid", _check_op([x], T.sigmoid, h))


def check_batch_norm(h: float = H_DEFAULT) -> CheckResult:
    rng = np.random.default_rng(6)
    x = rng.normal(size=(6, 3, 2, 4))
    gamma = rng.uniform(0.5, 1.5, size=4)
    beta = rng.normal(size=4)

    def apply(xt, gt, bt):
        return T.batch_norm(xt, gt, bt, training=True)

    return CheckResult("batch_norm", _check_op([x, gamma, beta], apply, h))


def check_dense(h: float = H_DEFAULT) -> CheckResult:
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(6, 3))
    b = rng.normal(size=3)

    def apply(xt, wt, bt):
        return T.add(T.matmul(xt, wt), bt)

    return CheckResult("dense", _check_op([x, w, b], apply, h))


def check_softmax_cross_entropy(h: float = H_DEFAULT) -> CheckResult:
    """FD on logits through softmax -> cross-entropy, plus the closed form (p - y)/N."""
    rng = np.random.default_rng(8)
    logits = rng.normal(size=(5, 4)) * 2.0
    labels = rng.integers(0, 4, size=5)
    y = T.one_hot(labels, 4, dtype=np.float64)

    def loss_from(z):
        return float(T.cross_entropy(T.softmax(Tensor(z)), y).data)

    zt = Tensor(logits, requires_grad=True)
    loss = T.cross_entropy(T.softmax(zt), y)
    loss.backward()
    fd = finite_difference(loss_from, logits, h)
    err = relative_error(zt.grad, fd)
    probs = T.softmax(Tensor(logits)).data
    closed = (probs - y) / logits.shape[0]
    err = max(err, relative_error(zt.grad, closed))
    return CheckResult("softmax_cross_entropy", err)


def check_se_block(h: float = H_DEFAULT) -> CheckResult:
    """End to end through squeeze, bottleneck FCs, sigmoid gate, and rescale."""
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 3, 3, 4))
    block = SqueezeExcitation(channels=4, reduction_ratio=2, seed=17, dtype=np.float64)
    w1, b1 = block.w1.data.copy(), block.b1.data.copy()
    w2, b2 = block.w2.data.copy(), block.b2.data.copy()

    def apply(xt, w1t, b1t, w2t, b2t):
        block.w1, block.b1 = w1t, b1t
        block.w2, block.b2 = w2t, b2t
        return block.forward(xt, training=True)

    return CheckResult("se_block", _check_op([x, w1, b1, w2, b2], apply, h))


ALL_CHECKS: tuple[Callable[..., CheckResult], ...] = (
    check_matmul,
    check_conv2d,
    check_maxpool2d,
    check_global_avg_pool,
    check_relu,
    check_sigmoid,
    check_batch_norm,
    check_dense,
    check_softmax_cross_entropy,
    check_se_block,
)


def run_all(h: float = H_DEFAULT) -> list[CheckResult]:
    return [check(h) for check in ALL_CHECKS]
