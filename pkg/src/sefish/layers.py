"""Stateful layers over the autodiff core: conv, batch norm, channel
gating, dense, dropout, pooling, with named parameters and seeded
initialization.

Weight init: He-uniform for conv/dense weights that feed a ReLU,
Glorot-uniform for gate FCs and the final classifier, zero biases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import DimensionError, SpecError
from .tensor import Tensor

KINDS = ("conv", "batch_norm", "se", "relu", "max_pool", "dense", "dropout", "softmax", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer; fields irrelevant to a kind stay None."""

    kind: str
    filters: Optional[int] = None
    kernel_size: Optional[int] = None
    reduction_ratio: Optional[int] = None
    units: Optional[int] = None
    rate: Optional[float] = None
    activation: Optional[str] = None
    momentum: Optional[float] = None
    eps: Optional[float] = None
    init: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")


def _rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base protocol: forward, static output shape, and named parameters/state."""

    kind = "base"

    def forward(self, x: Tensor, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        raise NotImplementedError

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def parameters(self) -> list[tuple[str, Tensor]]:
        """Trainable tensors as (local name, tensor)."""
        return []

    def state(self) -> list[tuple[str, Tensor]]:
        """Non-trainable persistent tensors (running statistics)."""
        return []


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, in_channels: int, filters: int, kernel_size: int, seed: int, dtype=np.float32):
        if filters < 1 or kernel_size < 1:
            raise SpecError(f"conv needs positive filters/kernel_size, got {filters}/{kernel_size}")
        rng = _rng_from_seed(seed)
        fan_in = kernel_size * kernel_size * in_channels
        self.kernel = Tensor(
            he_uniform(rng, (kernel_size, kernel_size, in_channels, filters), fan_in, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(filters, dtype=dtype), requires_grad=True)

    def forward(self, x, training=False, rng=None):
        return T.add(T.conv2d(x, self.kernel), self.bias)

    def output_shape(self, input_shape):
        h, w, _ = input_shape
        kh, kw, _, f = self.kernel.shape
        if kh > h or kw > w:
            raise SpecError(f"conv kernel {kh}x{kw} does not fit input {h}x{w}")
        return (h - kh + 1, w - kw + 1, f)

    def parameters(self):
        return [("kernel", self.kernel), ("bias", self.bias)]


class BatchNorm(Layer):
    kind = "batch_norm"

    def __init__(self, num_features: int, momentum: float = 0.99, eps: float = 1e-5, dtype=np.float32):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.running_mean = Tensor(np.zeros(num_features, dtype=dtype))
        self.running_var = Tensor(np.ones(num_features, dtype=dtype))

    def forward(self, x, training=False, rng=None):
        return T.batch_norm(
            x,
            self.gamma,
            self.beta,
            training=training,
            running_mean=self.running_mean.data,
            running_var=self.running_var.data,
            momentum=self.momentum,
            eps=self.eps,
        )

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class SqueezeExcitation(Layer):
    """Channel recalibration: squeeze to per-channel means, run a bottlenecked
    two-layer FC with sigmoid output, and rescale every channel by its gate.

    The bottleneck width is ceil(channels / reduction_ratio) so at least one
    unit survives when channels < ratio. Output shape always equals input shape.
    """

    kind = "se"

    def __init__(self, channels: int, reduction_ratio: int, seed: int = 0,
                 activation: str = "relu", dtype=np.float32):
        if reduction_ratio < 1:
            raise SpecError(f"reduction ratio must be >= 1, got {reduction_ratio}")
        if activation not in ("relu", "identity"):
            raise SpecError(f"se activation must be 'relu' or 'identity', got {activation!r}")
        self.channels = channels
        self.activation = activation
        hidden = -(-channels // reduction_ratio)
        rng = _rng_from_seed(seed)
        self.w1 = Tensor(glorot_uniform(rng, (channels, hidden), channels, hidden, dtype), requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
        self.w2 = Tensor(glorot_uniform(rng, (hidden, channels), hidden, channels, dtype), requires_grad=True)
        self.b2 = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4 or x.shape[-1] != self.channels:
            raise DimensionError(f"se block built for {self.channels} channels, got input {x.shape}")
        z = T.global_avg_pool(x)
        h = T.add(T.matmul(z, self.w1), self.b1)
        if self.activation == "relu":
            h = T.relu(h)
        gate = T.sigmoid(T.add(T.matmul(h, self.w2), self.b2))
        b = x.shape[0]
        return T.multiply(x, T.reshape(gate, (b, 1, 1, self.channels)))

    def parameters(self):
        return [("fc1/weight", self.w1), ("fc1/bias", self.b1),
                ("fc2/weight", self.w2), ("fc2/bias", self.b2)]


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False, rng=None):
        return T.relu(x)


class MaxPool(Layer):
    kind = "max_pool"

    def forward(self, x, training=False, rng=None):
        return T.maxpool2d(x)

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if h < 2 or w < 2:
            raise SpecError(f"max pool needs spatial extents >= 2, got {h}x{w}")
        return (h // 2, w // 2, c)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, units: int, seed: int, init: str = "he", dtype=np.float32):
        if units < 1:
            raise SpecError(f"dense needs positive units, got {units}")
        rng = _rng_from_seed(seed)
        if init == "he":
            weight = he_uniform(rng, (in_features, units), in_features, dtype)
        elif init == "glorot":
            weight = glorot_uniform(rng, (in_features, units), in_features, units, dtype)
        else:
            raise SpecError(f"unknown dense init {init!r}")
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(np.zeros(units, dtype=dtype), requires_grad=True)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise DimensionError(
                f"dense expects (N, {self.weight.shape[0]}) input, got {x.shape}"
            )
        return T.add(T.matmul(x, self.weight), self.bias)

    def output_shape(self, input_shape):
        return (self.weight.shape[1],)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise SpecError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        return T.dropout(x, self.rate, training=training, rng=rng)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False, rng=None):
        return T.softmax(x)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False, rng=None):
        return T.reshape(x, (x.shape[0], -1))

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


def init_layer(spec: LayerSpec, input_shape: tuple[int, ...], seed: int, dtype=np.float32) -> Layer:
    """Build a layer instance for ``input_shape`` (shape excludes the batch axis).

    Deterministic under ``seed``; incompatible shapes raise ``SpecError``.
    """
    kind = spec.kind
    if kind == "conv":
        if len(input_shape) != 3:
            raise SpecError(f"conv expects (H, W, C) input, got {input_shape}")
        layer = Conv2D(input_shape[-1], spec.filters, spec.kernel_size, seed, dtype)
        layer.output_shape(input_shape)  # fail fast on kernels that do not fit
        return layer
    if kind == "batch_norm":
        return BatchNorm(
            input_shape[-1],
            momentum=spec.momentum if spec.momentum is not None else 0.99,
            eps=spec.eps if spec.eps is not None else 1e-5,
            dtype=dtype,
        )
    if kind == "se":
        if len(input_shape) != 3:
            raise SpecError(f"se block expects (H, W, C) input, got {input_shape}")
        return SqueezeExcitation(
            input_shape[-1],
            spec.reduction_ratio,
            seed=seed,
            activation=spec.activation or "relu",
            dtype=dtype,
        )
    if kind == "relu":
        return ReLU()
    if kind == "max_pool":
        layer = MaxPool()
        layer.output_shape(input_shape)
        return layer
    if kind == "dense":
        if len(input_shape) != 1:
            raise SpecError(f"dense expects flattened input, got {input_shape}")
        return Dense(input_shape[0], spec.units, seed, init=spec.init or "he", dtype=dtype)
    if kind == "dropout":
        return Dropout(spec.rate)
    if kind == "softmax":
        return Softmax()
    if kind == "flatten":
        return Flatten()
    raise SpecError(f"unknown layer kind {kind!r}")


class ParameterStore:
    """Ordered, uniquely named tensors with a role tag per entry.

    Roles: ``param`` (trainable) and ``stat`` (running statistics). Iteration
    order is insertion order and is the serialization order.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._roles: dict[str, str] = {}

    def add(self, name: str, tensor: Tensor, role: str = "param") -> None:
        if name in self._entries:
            raise SpecError(f"duplicate parameter name {name!r}")
        if role not in ("param", "stat"):
            raise SpecError(f"unknown parameter role {role!r}")
        self._entries[name] = tensor
        self._roles[name] = role

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def role(self, name: str) -> str:
        return self._roles[name]

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._entries.items())

    def trainable(self) -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self._entries.items() if self._roles[n] == "param")

    def stats(self) -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self._entries.items() if self._roles[n] == "stat")

    def num_values(self, role: Optional[str] = "param") -> int:
        return sum(
            t.size for n, t in self._entries.items() if role is None or self._roles[n] == role
        )
