import numpy as np
import pytest
from PIL import Image

from sefish import ModelSpec


def class_image(rng, label, num_classes, size):
    base = np.zeros((size, size, 3), dtype=np.float32)
    hue = label / max(num_classes, 1)
    base[..., 0] = 0.2 + 0.6 * hue
    base[..., 1] = 0.8 - 0.6 * hue
    base[..., 2] = 0.3 + 0.4 * ((label * 7) % num_classes) / max(num_classes, 1)
    yy, xx = np.mgrid[0:size, 0:size]
    phase = rng.uniform(0, 2 * np.pi)
    stripes = 0.15 * np.sin(2 * np.pi * (label + 2) * (xx + yy * (label % 3)) / size + phase)
    img = base + stripes[..., None].astype(np.float32)
    top, left = rng.integers(0, max(size - size // 4, 1), size=2)
    img[top:top + size // 4, left:left + size // 4] += 0.2
    img += rng.normal(0, 0.05, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def write_image_tree(root, num_classes=4, per_class=20, size=32, seed=0, class_sizes=None):
    """Class-per-directory PNG tree with separable synthetic classes."""
    rng = np.random.default_rng(seed)
    sizes = class_sizes if class_sizes is not None else [per_class] * num_classes
    for label, count in enumerate(sizes):
        class_dir = root / f"species_{label:02d}"
        class_dir.mkdir(parents=True)
        for i in range(count):
            arr = class_image(rng, label, len(sizes), size)
            Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(
                class_dir / f"img_{i:04d}.png"
            )
    return root


@pytest.fixture
def image_tree(tmp_path):
    """Factory fixture: builds a synthetic dataset directory under tmp_path."""

    def build(name="data", **kwargs):
        return write_image_tree(tmp_path / name, **kwargs)

    return build


def small_spec(num_classes=4, **overrides):
    """32x32 three-stage configuration: fast enough for in-test training."""
    defaults = dict(
        height=32,
        width=32,
        stages=((8, 5), (16, 3), (32, 3)),
        reduction_ratio=4,
        fc_units=32,
        num_classes=num_classes,
    )
    defaults.update(overrides)
    return ModelSpec(**defaults)


def tiny_spec(num_classes=3, **overrides):
    """16x16 two-stage configuration for CLI round trips."""
    defaults = dict(
        height=16,
        width=16,
        stages=((4, 3), (8, 3)),
        reduction_ratio=2,
        fc_units=16,
        num_classes=num_classes,
    )
    defaults.update(overrides)
    return ModelSpec(**defaults)
