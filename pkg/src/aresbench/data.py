"""Synthetic shapes dataset and parametric image corruptions.

Each image shows one shape on a textured background; the label is the shape
kind. Position, scale, foreground/background colour and background texture
are nuisance factors drawn per image from ``(seed, split, index)``.

A fraction ``FAINT_FRACTION`` of images draw the shape at low contrast
(``FAINT_CONTRAST`` per channel) over a quieter background. A standard model
reads these easily, but a perturbation of a few 1/255 steps can wash the
shape out, so they carry the accuracy/robustness trade-off that adversarial
training is expected to show.

Corruption parameter table (a calibrated stand-in, not ImageNet-C's):

=============  =========  ====  ====  ====  ====  ====
kind           parameter  s=1   s=2   s=3   s=4   s=5
=============  =========  ====  ====  ====  ====  ====
GaussianNoise  sigma      0.04  0.08  0.12  0.18  0.26
ShotNoise      photons    60    25    12    5     3
ImpulseNoise   amount     0.03  0.06  0.09  0.17  0.27
GaussianBlur   sigma      0.5   0.75  1.0   1.5   2.0
Contrast       factor     0.6   0.45  0.3   0.2   0.12
Brightness     shift      0.1   0.2   0.3   0.4   0.5
=============  =========  ====  ====  ====  ====  ====

PNG dumps are 8-bit quantized (``round(255 * x)``) for inspection only;
evaluation always reads the float64 record files.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import records
from .errors import FormatError

SHAPES = ("circle", "square", "triangle", "cross", "ring", "star", "bar", "checker")
CORRUPTIONS = ("GaussianNoise", "ShotNoise", "ImpulseNoise", "GaussianBlur", "Contrast", "Brightness")
SEVERITIES = (1, 2, 3, 4, 5)

_TABLE = {
    "GaussianNoise": ("sigma", (0.04, 0.08, 0.12, 0.18, 0.26)),
    "ShotNoise": ("photons", (60.0, 25.0, 12.0, 5.0, 3.0)),
    "ImpulseNoise": ("amount", (0.03, 0.06, 0.09, 0.17, 0.27)),
    "GaussianBlur": ("sigma", (0.5, 0.75, 1.0, 1.5, 2.0)),
    "Contrast": ("factor", (0.6, 0.45, 0.3, 0.2, 0.12)),
    "Brightness": ("shift", (0.1, 0.2, 0.3, 0.4, 0.5)),
}
_SPLIT_TAG = {"train": 0, "test": 1}
# max centre offset in pixels (at 32x32) and min mean |fg - bg|
JITTER = 2.0
MIN_CONTRAST = 0.4
GRATING = 0.08
FAINT_FRACTION = 0.1
FAINT_CONTRAST = (0.05, 0.10)
FAINT_TEXTURE = 0.25


@dataclass(frozen=True)
class DatasetSpec:
    class_count: int = 8
    image_shape: tuple[int, int, int] = (3, 32, 32)
    train_size: int = 2000
    test_size: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "image_shape", tuple(int(v) for v in self.image_shape))
        if not 2 <= self.class_count <= len(SHAPES):
            raise ValueError(f"class_count must be in 2..{len(SHAPES)}")
        if self.image_shape[0] != 3 or len(self.image_shape) != 3:
            raise ValueError("images are RGB: image_shape must be (3, H, W)")
        if min(self.train_size, self.test_size) < self.class_count:
            raise ValueError("each split needs at least class_count samples")

    def to_dict(self):
        d = asdict(self)
        d["image_shape"] = list(self.image_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["class_count"], tuple(d["image_shape"]), d["train_size"], d["test_size"], d["seed"])


@dataclass
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    spec: DatasetSpec | None = None
    split: str = "test"

    def __len__(self):
        return len(self.labels)

    def subset(self, n):
        return LabeledDataset(self.images[:n], self.labels[:n], self.spec, self.split)

    def to_bytes(self):
        header = {"kind": "dataset", "split": self.split,
                  "spec": self.spec.to_dict() if self.spec else None}
        return records.encode(header, {"images": self.images, "labels": self.labels.astype(np.float64)})


@dataclass
class DatasetSplits:
    train: LabeledDataset
    test: LabeledDataset


def _shape_sdf(kind, dx, dy, r, rng):
    """Approximate signed distance (pixels) to the shape boundary; negative inside."""
    dist = np.hypot(dx, dy)
    if kind == "circle":
        return dist - r
    if kind == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) - 0.8 * r
    if kind == "triangle":
        # upward equilateral triangle, inradius r/2 (y axis points down)
        normals = [(0.0, 1.0), (np.sqrt(3) / 2, -0.5), (-np.sqrt(3) / 2, -0.5)]
        return np.max([nx * dx + ny * dy for nx, ny in normals], axis=0) - 0.5 * r
    if kind == "cross":
        arm = np.maximum(np.abs(dx) - r, np.abs(dy) - 0.3 * r)
        return np.minimum(arm, np.maximum(np.abs(dx) - 0.3 * r, np.abs(dy) - r))
    if kind == "ring":
        return np.abs(dist - 0.75 * r) - 0.25 * r
    if kind == "star":
        phi = np.arctan2(dy, dx) + np.pi / 2
        sector = 2 * np.pi / 5
        t = np.mod(phi, sector) / sector
        radius = 0.4 * r + 0.6 * r * np.abs(1 - 2 * t)
        return dist - radius
    if kind == "bar":
        if rng.random() < 0.5:
            dx, dy = dy, dx
        return np.maximum(np.abs(dx) - r, np.abs(dy) - 0.25 * r)
    if kind == "checker":
        inside = np.maximum(np.abs(dx), np.abs(dy)) - 0.8 * r
        cell = max(r * 0.4, 2.0)
        parity = (np.floor((dx + 0.8 * r) / cell) + np.floor((dy + 0.8 * r) / cell)) % 2
        return np.where(parity == 0, inside, np.maximum(inside, 0.6))
    raise ValueError(f"unknown shape {kind!r}")


def render_image(label: int, shape: tuple[int, int, int], rng: np.random.Generator) -> np.ndarray:
    _, h, w = shape
    scale = min(h, w) / 32.0
    r = rng.uniform(8.0, 11.0) * scale
    cx = w / 2 + rng.uniform(-JITTER, JITTER) * scale
    cy = h / 2 + rng.uniform(-JITTER, JITTER) * scale
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    bg = rng.uniform(0.0, 1.0, 3)
    faint = rng.random() < FAINT_FRACTION
    if faint:
        bg = rng.uniform(0.15, 0.85, 3)
        fg = bg + rng.uniform(*FAINT_CONTRAST, 3) * rng.choice([-1.0, 1.0])
    else:
        while True:
            fg = rng.uniform(0.0, 1.0, 3)
            if np.abs(fg - bg).mean() >= MIN_CONTRAST:
                break
    # background texture: one random grating plus faint pixel noise
    freq = rng.uniform(1.0, 5.0, 2) * rng.choice([-1.0, 1.0], 2)
    phase = rng.uniform(0, 2 * np.pi)
    grating = GRATING * np.sin(2 * np.pi * (freq[0] * xx / w + freq[1] * yy / h) + phase)
    texture = grating + 0.02 * rng.standard_normal((h, w))
    if faint:
        texture *= FAINT_TEXTURE
    sdf = _shape_sdf(SHAPES[label], xx - cx, yy - cy, r, rng)
    mask = np.clip(0.5 - sdf, 0.0, 1.0)
    img = (bg[:, None, None] + texture) * (1 - mask) + fg[:, None, None] * mask
    return np.clip(img, 0.0, 1.0)


def _render_split(spec: DatasetSpec, split: str, n: int) -> LabeledDataset:
    order_rng = np.random.default_rng([spec.seed, _SPLIT_TAG[split], 1 << 20])
    labels = order_rng.permutation(np.arange(n) % spec.class_count)
    images = np.empty((n,) + spec.image_shape)
    for i in range(n):
        rng = np.random.default_rng([spec.seed, _SPLIT_TAG[split], i])
        images[i] = render_image(int(labels[i]), spec.image_shape, rng)
    return LabeledDataset(images, labels.astype(np.int64), spec, split)


def generate_dataset(spec: DatasetSpec) -> DatasetSplits:
    """Deterministic train and test splits for ``spec``."""
    return DatasetSplits(
        _render_split(spec, "train", spec.train_size),
        _render_split(spec, "test", spec.test_size),
    )


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _TABLE:
            raise ValueError(f"unknown corruption kind {self.kind!r}; expected one of {CORRUPTIONS}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"severity must be in 1..5, got {self.severity}")


def corruption_table() -> dict[tuple[str, int], dict[str, float]]:
    return {
        (kind, s): {name: values[s - 1]}
        for kind, (name, values) in _TABLE.items()
        for s in SEVERITIES
    }


def corrupt_with(kind: str, value: float, image: np.ndarray, rng: np.random.Generator | None = None):
    """Apply one corruption with an explicit parameter value (no table lookup)."""
    x = np.asarray(image, dtype=np.float64)
    if kind == "GaussianNoise":
        out = x + value * rng.standard_normal(x.shape)
    elif kind == "ShotNoise":
        out = rng.poisson(x * value) / value
    elif kind == "ImpulseNoise":
        u = rng.random(x.shape)
        out = np.where(u < value / 2, 0.0, np.where(u < value, 1.0, x))
    elif kind == "GaussianBlur":
        sigma = [0.0] * (x.ndim - 2) + [value, value]
        out = gaussian_filter(x, sigma=sigma, mode="reflect")
    elif kind == "Contrast":
        mean = x.mean(axis=(-3, -2, -1), keepdims=True)
        out = (x - mean) * value + mean
    elif kind == "Brightness":
        out = x + value
    else:
        raise ValueError(f"unknown corruption kind {kind!r}")
    return np.clip(out, 0.0, 1.0)


def apply_corruption(image: np.ndarray, c: CorruptionSpec, index: int = 0) -> np.ndarray:
    """Corrupt one (C, H, W) image; stochastic kinds draw from ``(c.seed, kind, severity, index)``."""
    name, values = _TABLE[c.kind]
    rng = np.random.default_rng([c.seed, CORRUPTIONS.index(c.kind), c.severity, index])
    return corrupt_with(c.kind, values[c.severity - 1], image, rng)


def corrupt_dataset(images: np.ndarray, c: CorruptionSpec, indices=None) -> np.ndarray:
    if indices is None:
        indices = range(len(images))
    return np.stack([apply_corruption(img, c, int(i)) for img, i in zip(images, indices)])


def save_dataset(ds: LabeledDataset, path):
    with open(path, "wb") as fh:
        fh.write(ds.to_bytes())


def load_dataset(path) -> LabeledDataset:
    header, tensors = records.read(path)
    if header.get("kind") != "dataset":
        raise FormatError(f"expected a dataset file, found kind {header.get('kind')!r}")
    spec = DatasetSpec.from_dict(header["spec"]) if header.get("spec") else None
    return LabeledDataset(tensors["images"], tensors["labels"].astype(np.int64), spec, header["split"])


def dump_png(ds: LabeledDataset, directory, limit=None):
    """Write 8-bit PNG previews named ``<index>_<shape>.png``."""
    from pathlib import Path

    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = len(ds) if limit is None else min(limit, len(ds))
    for i in range(n):
        arr = np.round(ds.images[i].transpose(1, 2, 0) * 255).astype(np.uint8)
        Image.fromarray(arr).save(directory / f"{i:05d}_{SHAPES[ds.labels[i]]}.png")
