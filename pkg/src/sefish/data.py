"""Dataset ingestion, deterministic splitting, batching, and augmentation.

Datasets live on disk as ``root/<class_name>/<image files>`` (PNG/JPEG).
Class names come from the directory names sorted lexicographically, and
samples are ordered lexicographically by path, so ingestion is fully
deterministic for fixed directory contents.

Images decode to float arrays in [0, 1] and are resized by pure bilinear
sampling at output-pixel centers (edge-clamped), independent of any
image-library filter behavior.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, IngestError, SplitError
from .tensor import Tensor

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
SPLIT_NAMES = ("train", "validation", "test")
MANIFEST_VERSION = 1

# decoded-image cache is enabled only while the whole dataset fits comfortably
CACHE_BUDGET_BYTES = 256 * 1024 * 1024


@dataclass(frozen=True)
class AugmentConfig:
    """Ranges for the composite affine transform plus horizontal flip.

    The default ranges are artifact choices, config-exposed: rotation ±15°,
    shifts ±10% of the image size, shear ±10°, zoom ±10%, flip probability 0.5.
    """

    rotation_range: float = 15.0
    width_shift: float = 0.1
    height_shift: float = 0.1
    shear_range: float = 10.0
    zoom_range: float = 0.1
    horizontal_flip_prob: float = 0.5

    def __post_init__(self):
        for name in ("rotation_range", "width_shift", "height_shift", "shear_range", "zoom_range"):
            if getattr(self, name) < 0:
                raise DataError(f"augment range {name} must be non-negative")
        if not 0.0 <= self.horizontal_flip_prob <= 1.0:
            raise DataError("horizontal_flip_prob must be in [0, 1]")
        if self.zoom_range >= 1.0:
            raise DataError("zoom_range must be < 1")

    def to_dict(self) -> dict:
        return {
            "rotation_range": self.rotation_range,
            "width_shift": self.width_shift,
            "height_shift": self.height_shift,
            "shear_range": self.shear_range,
            "zoom_range": self.zoom_range,
            "horizontal_flip_prob": self.horizontal_flip_prob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        known = set(cls().to_dict())
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown augment fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Dataset:
    """Labeled image collection; records decode lazily at batch time."""

    root: Path
    samples: list[tuple[Path, int]]
    class_names: tuple[str, ...]
    skipped: tuple[str, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.samples)

    def class_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(self.class_names, 0)
        for _, label in self.samples:
            counts[self.class_names[label]] += 1
        return counts

    def image(self, path: Path, height: int, width: int) -> np.ndarray:
        """Decoded, resized image in [0, 1]; cached while the dataset is small."""
        key = (str(path), height, width)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        arr = decode_image(path)
        arr = resize(arr, height, width)
        if height * width * 12 * len(self.samples) <= CACHE_BUDGET_BYTES:
            self._cache[key] = arr
        return arr


def decode_image(path: Union[str, Path]) -> np.ndarray:
    """Decode an 8-bit image file to float32 RGB in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return arr


def ingest(root: Union[str, Path]) -> Dataset:
    """Scan a class-per-directory image tree.

    Undecodable files are skipped and reported in ``Dataset.skipped``; a class
    directory with no decodable images at all is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"dataset root {root} is not a directory")
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)
    if not class_dirs:
        raise IngestError(f"dataset root {root} contains no class directories")
    class_names = tuple(d.name for d in class_dirs)
    samples: list[tuple[Path, int]] = []
    skipped: list[str] = []
    for label, class_dir in enumerate(class_dirs):
        kept = 0
        files = sorted(
            (p for p in class_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS),
            key=lambda p: str(p),
        )
        for path in files:
            try:
                with Image.open(path) as img:
                    img.verify()
            except Exception:
                skipped.append(str(path.relative_to(root)))
                continue
            samples.append((path, label))
            kept += 1
        if kept == 0:
            raise IngestError(f"class directory {class_dir.name!r} has no decodable images")
    samples.sort(key=lambda s: str(s[0]))
    return Dataset(root=root, samples=samples, class_names=class_names, skipped=tuple(skipped))


def resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resample to (height, width), sampling at output-pixel centers.

    Sample coordinates are edge-clamped; constants are preserved exactly and
    values stay inside the input's range. Aspect ratio is not preserved.
    """
    in_h, in_w = image.shape[:2]
    if (in_h, in_w) == (height, width):
        return image.copy()
    ys = (np.arange(height, dtype=np.float64) + 0.5) * (in_h / height) - 0.5
    xs = (np.arange(width, dtype=np.float64) + 0.5) * (in_w / width) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).astype(image.dtype)[:, None, None]
    wx = (xs - x0).astype(image.dtype)[None, :, None]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bottom = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def _bilinear_sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (H_out, W_out) coordinate grids with edge clamping."""
    in_h, in_w = image.shape[:2]
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).astype(image.dtype)[..., None]
    wx = (xs - x0).astype(image.dtype)[..., None]
    v00 = image[y0, x0]
    v01 = image[y0, x1]
    v10 = image[y1, x0]
    v11 = image[y1, x1]
    top = v00 * (1 - wx) + v01 * wx
    bottom = v10 * (1 - wx) + v11 * wx
    return top * (1 - wy) + bottom * wy


def flip_horizontal(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1, :])


def augment(image: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """One composite affine draw (rotation, shift, shear, zoom about the image
    center) followed by a horizontal-flip draw.

    Out-of-frame samples replicate the nearest edge. The draw order is fixed so
    rng streams stay aligned across configs; an all-zero config is the identity
    bit-for-bit. Output dimensions equal input dimensions.
    """
    h, w = image.shape[:2]
    theta = math.radians(rng.uniform(-config.rotation_range, config.rotation_range))
    tx = rng.uniform(-config.width_shift, config.width_shift) * w
    ty = rng.uniform(-config.height_shift, config.height_shift) * h
    shear = math.radians(rng.uniform(-config.shear_range, config.shear_range))
    zoom = rng.uniform(1.0 - config.zoom_range, 1.0 + config.zoom_range)
    do_flip = rng.random() < config.horizontal_flip_prob

    if theta == 0.0 and tx == 0.0 and ty == 0.0 and shear == 0.0 and zoom == 1.0:
        out = image.copy()
    else:
        # forward map: p_out = A (p_in - c) + c + t with A = R(theta) Shear Zoom
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        rot = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
        shr = np.array([[1.0, math.tan(shear)], [0.0, 1.0]])
        scl = np.array([[zoom, 0.0], [0.0, zoom]])
        fwd = rot @ shr @ scl
        inv = np.linalg.inv(fwd)
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
        rel = np.stack([xx - cx - tx, yy - cy - ty], axis=-1)
        src = rel @ inv.T
        out = _bilinear_sample(image, src[..., 1] + cy, src[..., 0] + cx)
        out = out.astype(image.dtype, copy=False)
    if do_flip:
        out = flip_horizontal(out)
    return out


# ---------------------------------------------------------------------------
# splitting


@dataclass
class SplitManifest:
    """Deterministic per-sample partition into train/validation/test."""

    seed: int
    fractions: tuple[float, float, float]
    assignments: dict[str, str]  # relative path -> split name

    def counts(self) -> dict[str, int]:
        out = dict.fromkeys(SPLIT_NAMES, 0)
        for split in self.assignments.values():
            out[split] += 1
        return out

    def paths_for(self, split: str) -> set[str]:
        if split not in SPLIT_NAMES:
            raise SplitError(f"unknown split {split!r}")
        return {p for p, s in self.assignments.items() if s == split}

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        doc = {
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "fractions": list(self.fractions),
            "assignments": self.assignments,
        }
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SplitManifest":
        doc = json.loads(Path(path).read_text())
        if doc.get("version") != MANIFEST_VERSION:
            raise DataError(f"unsupported split manifest version {doc.get('version')!r}")
        return cls(
            seed=int(doc["seed"]),
            fractions=tuple(doc["fractions"]),
            assignments=dict(doc["assignments"]),
        )


def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    exact = [f * n for f in fractions]
    counts = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in range(n - sum(counts)):
        counts[order[i % len(order)]] += 1
    return counts


def split(dataset: Dataset, seed: int,
          fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)) -> SplitManifest:
    """Stratified per-class partition, deterministic under ``seed``.

    Per class, counts follow largest-remainder rounding of the fractions
    (within ±1 of exact), with one sample moved out of the largest bucket
    when needed so every split stays populated.
    """
    if len(fractions) != 3:
        raise SplitError(f"expected 3 fractions, got {len(fractions)}")
    if any(f <= 0 for f in fractions):
        raise SplitError("all split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"split fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    assignments: dict[str, str] = {}
    for label, class_name in enumerate(dataset.class_names):
        indices = [i for i, (_, lab) in enumerate(dataset.samples) if lab == label]
        if len(indices) < 3:
            raise SplitError(
                f"class {class_name!r} has {len(indices)} samples; need at least 3 to populate all splits"
            )
        counts = _largest_remainder(len(indices), fractions)
        for bucket in range(3):
            while counts[bucket] == 0:
                donor = int(np.argmax(counts))
                counts[donor] -= 1
                counts[bucket] += 1
        perm = rng.permutation(len(indices))
        cursor = 0
        for split_name, count in zip(SPLIT_NAMES, counts):
            for k in perm[cursor:cursor + count]:
                path = dataset.samples[indices[k]][0]
                assignments[str(path.relative_to(dataset.root))] = split_name
            cursor += count
    return SplitManifest(seed=seed, fractions=tuple(fractions), assignments=assignments)


# ---------------------------------------------------------------------------
# batching


def batch_count(num_samples: int, batch_size: int) -> int:
    return -(-num_samples // batch_size)


def split_samples(dataset: Dataset, manifest: SplitManifest, split_name: str) -> list[tuple[Path, int]]:
    wanted = manifest.paths_for(split_name)
    picked = [(p, lab) for p, lab in dataset.samples if str(p.relative_to(dataset.root)) in wanted]
    missing = wanted - {str(p.relative_to(dataset.root)) for p, _ in picked}
    if missing:
        raise DataError(f"manifest references {len(missing)} paths missing from the dataset")
    return picked


def batches(
    dataset: Dataset,
    manifest: SplitManifest,
    split_name: str,
    batch_size: int,
    height: int,
    width: int,
    shuffle_seed: Optional[int] = None,
    augment_config: Optional[AugmentConfig] = None,
    dtype=np.float32,
) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Stream (images, labels) batches covering the split exactly once.

    The final partial batch is emitted. Shuffling and augmentation draws come
    from one generator seeded by ``shuffle_seed``, so epochs are reproducible.
    Augmentation applies to the training split only, even if a config is given.
    """
    if batch_size < 1:
        raise DataError(f"batch size must be >= 1, got {batch_size}")
    samples = split_samples(dataset, manifest, split_name)
    order = np.arange(len(samples))
    rng: Optional[np.random.Generator] = None
    if shuffle_seed is not None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(shuffle_seed)))
        order = rng.permutation(len(samples))
    apply_augment = augment_config is not None and split_name == "train"
    if apply_augment and rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(0)))
    for start in range(0, len(samples), batch_size):
        chunk = order[start:start + batch_size]
        imgs = np.empty((len(chunk), height, width, 3), dtype=dtype)
        labels = np.empty(len(chunk), dtype=np.int64)
        for row, idx in enumerate(chunk):
            path, label = samples[idx]
            img = dataset.image(path, height, width)
            if apply_augment:
                img = augment(img, augment_config, rng)
            imgs[row] = img
            labels[row] = label
        yield Tensor(imgs), labels
