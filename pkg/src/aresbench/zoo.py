"""Model architectures, initialization and weight checkpoints.

Families
--------
Both families start with a fixed input scaling ``(x - 0.5) / 0.25``.

SmallCNN (width w)::

    conv3x3(C -> 8w) - ReLU - avgpool2 - conv3x3(8w -> 16w) - ReLU - avgpool2 - dense(16w*H/4*W/4 -> K)

PatchMLP (width w, patch 4)::

    patch-embed(4x4, C*16 -> 16w) - dense(16w*(H/4)*(W/4) -> 64w) - ReLU - dense(64w -> K)

BaselineRef is SmallCNN with width 1 and seed 0; it is the mCE denominator.

Parameter count of SmallCNN on (3, 32, 32) with K = 8 and width 1:
conv1 8*3*9 + 8 = 224, conv2 16*8*9 + 16 = 1168, dense 16*8*8*8 + 8 = 8200,
total 9592.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import records
from .errors import FormatError, ShapeError
from .tensor import AvgPool2, Conv3x3, Dense, Normalize, PatchEmbed, ReLU, check_shapes, forward_backward, forward_pass

FAMILIES = ("SmallCNN", "PatchMLP", "BaselineRef")
TRAINING_TAGS = ("Normal", "AT")
PATCH = 4


@dataclass(frozen=True)
class ModelSpec:
    family: str = "SmallCNN"
    input_shape: tuple[int, int, int] = (3, 32, 32)
    class_count: int = 8
    width: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if len(self.input_shape) != 3:
            raise ShapeError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if self.family == "BaselineRef" and (self.width != 1 or self.seed != 0):
            raise ValueError("BaselineRef is pinned to width 1 and seed 0")
        _, h, w = self.input_shape
        if h % 4 or w % 4:
            raise ShapeError(f"{self.family} needs H and W divisible by 4, got {self.input_shape}")

    @classmethod
    def baseline(cls, input_shape=(3, 32, 32), class_count=8):
        return cls("BaselineRef", input_shape, class_count, 1, 0)

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], tuple(d["input_shape"]), d["class_count"], d["width"], d["seed"])


def layers_for(spec: ModelSpec) -> list:
    c, h, w = spec.input_shape
    k, wd = spec.class_count, spec.width
    if spec.family in ("SmallCNN", "BaselineRef"):
        layers = [
            Normalize("norm"),
            Conv3x3("conv1", c, 8 * wd), ReLU("relu1"), AvgPool2("pool1"),
            Conv3x3("conv2", 8 * wd, 16 * wd), ReLU("relu2"), AvgPool2("pool2"),
            Dense("fc", 16 * wd * (h // 4) * (w // 4), k),
        ]
    else:
        n_patches = (h // PATCH) * (w // PATCH)
        layers = [
            Normalize("norm"),
            PatchEmbed("embed", c, PATCH, 16 * wd),
            Dense("fc1", n_patches * 16 * wd, 64 * wd), ReLU("relu1"),
            Dense("fc2", 64 * wd, k),
        ]
    check_shapes(layers, spec.input_shape)
    return layers


@dataclass
class ModelWeights:
    spec: ModelSpec
    tensors: dict[str, np.ndarray]
    training_tag: str = "Normal"
    ema_applied: bool = False
    _layers: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.training_tag not in TRAINING_TAGS:
            raise ValueError(f"training_tag must be one of {TRAINING_TAGS}")
        expected = {}
        for layer in self.layers:
            expected.update(layer.param_shapes())
        if list(expected) != list(self.tensors):
            raise ShapeError(f"tensor names {list(self.tensors)} do not match spec {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"tensor {name} has shape {self.tensors[name].shape}, expected {shape}")

    @property
    def layers(self):
        if self._layers is None:
            self._layers = layers_for(self.spec)
        return self._layers

    def _check_batch(self, x):
        if x.shape[1:] != self.spec.input_shape:
            raise ShapeError(f"batch shape {x.shape} does not match model input {self.spec.input_shape}")

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check_batch(x)
        return forward_pass(self.layers, self.tensors, x)

    def predict(self, x):
        return predict_batch(self, x)

    def loss_grad(self, x, targets):
        """Per-sample losses, logits and per-sample input gradients."""
        x = np.asarray(x, dtype=np.float64)
        self._check_batch(x)
        losses, logits, grads = forward_backward(
            self.layers, self.tensors, x, targets, reduction="sum", need_params=False
        )
        return losses, logits, grads.input_grad

    def copy(self, **changes):
        out = ModelWeights(
            self.spec,
            {k: v.copy() for k, v in self.tensors.items()},
            self.training_tag,
            self.ema_applied,
        )
        for key, value in changes.items():
            setattr(out, key, value)
        return out

    def param_count(self):
        return int(sum(v.size for v in self.tensors.values()))

    def to_bytes(self):
        header = {
            "kind": "weights",
            "spec": self.spec.to_dict(),
            "training_tag": self.training_tag,
            "ema_applied": self.ema_applied,
        }
        return records.encode(header, self.tensors)

    def digest(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    def __deepcopy__(self, memo):
        return self.copy()


def build_model(spec: ModelSpec) -> ModelWeights:
    """He-normal weights and zero biases, drawn in layer order from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    tensors = {}
    for layer in layers_for(spec):
        for name, shape in layer.param_shapes().items():
            if name.endswith(".bias"):
                tensors[name] = np.zeros(shape)
            else:
                tensors[name] = rng.standard_normal(shape) * np.sqrt(2.0 / layer.fan_in())
    return ModelWeights(spec, tensors)


def predict_batch(weights: ModelWeights, batch) -> np.ndarray:
    """Argmax labels; ties resolve to the lowest class index."""
    return np.argmax(weights.logits(batch), axis=1)


def save_weights(weights: ModelWeights, path):
    with open(path, "wb") as fh:
        fh.write(weights.to_bytes())


def weights_from_bytes(data: bytes) -> ModelWeights:
    header, tensors = records.decode(data)
    if header.get("kind") != "weights":
        raise FormatError(f"expected a weights file, found kind {header.get('kind')!r}")
    spec = ModelSpec.from_dict(header["spec"])
    return ModelWeights(spec, tensors, header["training_tag"], bool(header["ema_applied"]))


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read())

