"""Model assembly, weights serialization, and classifier surgery.

The network is a stack of conv stages (conv -> batch norm -> channel gate
-> relu -> 2x2 max pool) followed by a dense head (flatten -> dense ->
batch norm -> dense -> batch norm -> relu -> dropout -> classifier ->
softmax). Batch norm and the channel gates are config flags, so the
ablation variants share one code path.

Weights files are a versioned binary container: magic, format version,
the canonical spec JSON plus its SHA-256 fingerprint, then length-prefixed
(name, role, shape, little-endian float32 data) records in store order.
Round trips are bit-exact, including batch-norm running statistics.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import CompatibilityError, DimensionError, SpecError, WeightsFormatError
from .layers import Dense, LayerSpec, ParameterStore, Softmax, init_layer
from .tensor import Tensor

MAGIC = b"SEFISHW"
FORMAT_VERSION = 1

DEFAULT_STAGES = ((32, 5), (64, 3), (64, 3), (128, 2), (256, 2))


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; defaults are the 200x200, 23-class configuration."""

    height: int = 200
    width: int = 200
    channels: int = 3
    stages: tuple[tuple[int, int], ...] = DEFAULT_STAGES
    reduction_ratio: int = 16
    fc_units: int = 256
    dropout_rate: float = 0.5
    num_classes: int = 23
    batch_norm: bool = True
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5
    se_blocks: bool = True
    head_activation: str = "relu"
    se_activation: str = "relu"

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise SpecError(f"input extents must be positive, got {self.height}x{self.width}x{self.channels}")
        if not self.stages:
            raise SpecError("at least one conv stage is required")
        for i, stage in enumerate(self.stages, 1):
            if len(stage) != 2 or stage[0] < 1 or stage[1] < 1:
                raise SpecError(f"stage {i} must be a (filters, kernel_size) pair of positives, got {stage!r}")
        if self.num_classes < 2:
            raise SpecError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise SpecError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.reduction_ratio < 1:
            raise SpecError(f"reduction_ratio must be >= 1, got {self.reduction_ratio}")
        if not 0.0 <= self.bn_momentum < 1.0:
            raise SpecError(f"bn_momentum must be in [0, 1), got {self.bn_momentum}")
        if self.bn_eps <= 0.0:
            raise SpecError(f"bn_eps must be positive, got {self.bn_eps}")
        if self.head_activation not in ("relu", "identity"):
            raise SpecError(f"head_activation must be 'relu' or 'identity', got {self.head_activation!r}")
        object.__setattr__(self, "stages", tuple(tuple(s) for s in self.stages))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown model spec fields: {sorted(unknown)}")
        d = dict(d)
        if "stages" in d:
            d["stages"] = tuple(tuple(int(v) for v in s) for s in d["stages"])
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def shape_chain(spec: ModelSpec) -> list[dict]:
    """Per-stage shape arithmetic: conv shrinks by kernel-1, pooling halves (floor).

    Raises ``SpecError`` naming the first stage whose extents collapse.
    """
    h, w, c = spec.height, spec.width, spec.channels
    chain = []
    for i, (filters, kernel) in enumerate(spec.stages, 1):
        ch, cw = h - kernel + 1, w - kernel + 1
        if ch < 1 or cw < 1:
            raise SpecError(
                f"stage {i}: conv kernel {kernel} reduces {h}x{w} to {ch}x{cw} (non-positive)"
            )
        ph, pw = ch // 2, cw // 2
        if ph < 1 or pw < 1:
            raise SpecError(f"stage {i}: pooling reduces {ch}x{cw} to {ph}x{pw} (non-positive)")
        chain.append({"stage": i, "conv": (ch, cw, filters), "pool": (ph, pw, filters)})
        h, w, c = ph, pw, filters
    return chain


def flatten_width(spec: ModelSpec) -> int:
    last = shape_chain(spec)[-1]["pool"]
    return int(np.prod(last))


class ModelInstance:
    """An assembled network: ordered named layers plus their parameter store."""

    def __init__(self, spec: ModelSpec, named_layers: list[tuple[str, object]], dtype=np.float32):
        self.spec = spec
        self.named_layers = named_layers
        self.dtype = dtype
        self.params = ParameterStore()
        for name, layer in named_layers:
            for pname, tensor in layer.parameters():
                self.params.add(f"{name}/{pname}", tensor, role="param")
            for sname, tensor in layer.state():
                self.params.add(f"{name}/{sname}", tensor, role="stat")

    def forward(self, batch: Union[Tensor, np.ndarray], training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=self.dtype))
        expected = (self.spec.height, self.spec.width, self.spec.channels)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise DimensionError(
                f"expected input of shape (N, {expected[0]}, {expected[1]}, {expected[2]}), got {x.shape}"
            )
        for _, layer in self.named_layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def zero_grad(self) -> None:
        for _, tensor in self.params.trainable():
            tensor.zero_grad()

    def save_weights(self, path: Union[str, Path]) -> Path:
        return save_weights(self, path)


def _layer_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, index)).generate_state(1)[0])


def build_model(spec: ModelSpec, seed: int, dtype=np.float32) -> ModelInstance:
    """Assemble the full network; deterministic under ``seed``."""
    shape_chain(spec)  # validates the whole stack up front
    named: list[tuple[str, object]] = []
    shape: tuple[int, ...] = (spec.height, spec.width, spec.channels)
    idx = 0

    def put(name: str, lspec: LayerSpec):
        nonlocal shape, idx
        layer = init_layer(lspec, shape, _layer_seed(seed, idx), dtype)
        shape = layer.output_shape(shape)
        named.append((name, layer))
        idx += 1

    bn_spec = LayerSpec("batch_norm", momentum=spec.bn_momentum, eps=spec.bn_eps)
    for i, (filters, kernel) in enumerate(spec.stages, 1):
        put(f"stage{i}/conv", LayerSpec("conv", filters=filters, kernel_size=kernel))
        if spec.batch_norm:
            put(f"stage{i}/bn", bn_spec)
        if spec.se_blocks:
            put(f"stage{i}/se", LayerSpec("se", reduction_ratio=spec.reduction_ratio,
                                          activation=spec.se_activation))
        put(f"stage{i}/relu", LayerSpec("relu"))
        put(f"stage{i}/pool", LayerSpec("max_pool"))

    put("head/flatten", LayerSpec("flatten"))
    put("head/fc1", LayerSpec("dense", units=spec.fc_units))
    if spec.batch_norm:
        put("head/bn1", bn_spec)
    put("head/fc2", LayerSpec("dense", units=spec.fc_units))
    if spec.batch_norm:
        put("head/bn2", bn_spec)
    if spec.head_activation == "relu":
        put("head/relu", LayerSpec("relu"))
    put("head/dropout", LayerSpec("dropout", rate=spec.dropout_rate))
    put("head/classifier", LayerSpec("dense", units=spec.num_classes, init="glorot"))
    put("head/softmax", LayerSpec("softmax"))
    return ModelInstance(spec, named, dtype)


def replace_classifier(model: ModelInstance, new_classes: int, seed: int) -> ModelInstance:
    """Swap the final classifier for a fresh one with ``new_classes`` outputs.

    Every other parameter and running statistic keeps its exact tensor, so
    the rest of the network is bit-identical. The same instance is returned.
    """
    if new_classes < 2:
        raise SpecError(f"classifier needs at least 2 classes, got {new_classes}")
    idx = next(i for i, (name, _) in enumerate(model.named_layers) if name == "head/classifier")
    old: Dense = model.named_layers[idx][1]
    in_features = old.weight.shape[0]
    fresh = Dense(in_features, new_classes, seed, init="glorot", dtype=model.dtype)
    model.named_layers[idx] = ("head/classifier", fresh)
    model.spec = dataclasses.replace(model.spec, num_classes=new_classes)

    rebuilt = ParameterStore()
    for name, layer in model.named_layers:
        for pname, tensor in layer.parameters():
            rebuilt.add(f"{name}/{pname}", tensor, role="param")
        for sname, tensor in layer.state():
            rebuilt.add(f"{name}/{sname}", tensor, role="stat")
    model.params = rebuilt
    return model


# ---------------------------------------------------------------------------
# weights container


def save_weights(model: ModelInstance, path: Union[str, Path]) -> Path:
    path = Path(path)
    spec_json = model.spec.canonical_json().encode("utf-8")
    fingerprint = model.spec.fingerprint().encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(spec_json)))
        fh.write(spec_json)
        fh.write(struct.pack("<I", len(fingerprint)))
        fh.write(fingerprint)
        entries = list(model.params.items())
        fh.write(struct.pack("<I", len(entries)))
        for name, tensor in entries:
            if tensor.data.dtype != np.float32:
                raise WeightsFormatError(
                    f"weights files store float32 only; {name!r} has dtype {tensor.data.dtype}"
                )
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", 0 if model.params.role(name) == "param" else 1))
            fh.write(struct.pack("<I", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    return path


@dataclass
class WeightsFile:
    """Decoded weights container: spec, fingerprint, and named arrays in file order."""

    spec: ModelSpec
    fingerprint: str
    entries: list[tuple[str, str, np.ndarray]]  # (name, role, array)

    def entry_dict(self) -> dict[str, np.ndarray]:
        return {name: arr for name, _, arr in self.entries}


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise WeightsFormatError("truncated weights file")
    return buf


def load_weights(path: Union[str, Path]) -> WeightsFile:
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise WeightsFormatError(f"{path} is not a weights file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise WeightsFormatError(f"unsupported weights format version {version} (expected {FORMAT_VERSION})")
        (spec_len,) = struct.unpack("<I", _read_exact(fh, 4))
        spec_dict = json.loads(_read_exact(fh, spec_len).decode("utf-8"))
        spec = ModelSpec.from_dict(spec_dict)
        (fp_len,) = struct.unpack("<I", _read_exact(fh, 4))
        fingerprint = _read_exact(fh, fp_len).decode("ascii")
        if fingerprint != spec.fingerprint():
            raise WeightsFormatError("weights file fingerprint does not match its own spec")
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        entries = []
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (role_code,) = struct.unpack("<B", _read_exact(fh, 1))
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            nbytes = int(np.prod(shape)) * 4 if ndim else 4
            arr = np.frombuffer(_read_exact(fh, nbytes), dtype="<f4").reshape(shape)
            entries.append((name, "param" if role_code == 0 else "stat", arr.copy()))
        if fh.read(1):
            raise WeightsFormatError("trailing bytes after final weights record")
    return WeightsFile(spec=spec, fingerprint=fingerprint, entries=entries)


def spec_diff(a: ModelSpec, b: ModelSpec, ignore: tuple[str, ...] = ()) -> list[str]:
    fields = []
    for f in dataclasses.fields(ModelSpec):
        if f.name in ignore:
            continue
        if getattr(a, f.name) != getattr(b, f.name):
            fields.append(f.name)
    return fields


def load_into(model: ModelInstance, weights: WeightsFile) -> None:
    """Assign file arrays into the model, bit-exactly; specs must match."""
    differing = spec_diff(model.spec, weights.spec)
    if differing:
        raise CompatibilityError(
            f"weights file spec differs from model spec in fields: {', '.join(differing)}"
        )
    file_names = [name for name, _, _ in weights.entries]
    if file_names != model.params.names():
        raise CompatibilityError("weights file parameter names do not match the model")
    for name, _, arr in weights.entries:
        tensor = model.params[name]
        if tuple(arr.shape) != tensor.shape:
            raise CompatibilityError(f"shape mismatch for {name}: file {arr.shape} vs model {tensor.shape}")
        tensor.data[...] = arr


def load_model(path: Union[str, Path], dtype=np.float32) -> ModelInstance:
    """Rebuild a model from a weights file alone."""
    weights = load_weights(path)
    model = build_model(weights.spec, seed=0, dtype=dtype)
    load_into(model, weights)
    return model
