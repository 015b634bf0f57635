"""Fixed layer set with hand-written forward and backward passes.

Tensors are plain ``float64`` numpy arrays in NCHW layout. Parameters live in
an ordered ``dict`` keyed ``"<layer>.<param>"``; each layer only reads the
entries with its own prefix, so one dict can hold a whole network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeError


class Layer:
    """Base class. Subclasses implement the per-sample shape rule and the passes."""

    has_params = False

    def __init__(self, name: str):
        self.name = name

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def fan_in(self) -> int:
        return 1

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, params, x):
        raise NotImplementedError

    def backward(self, params, cache, grad_out, need_params=True):
        raise NotImplementedError

    def _p(self, params, key):
        return params[f"{self.name}.{key}"]

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1."""

    has_params = True

    def __init__(self, name, in_channels, out_channels):
        super().__init__(name)
        self.cin = in_channels
        self.cout = out_channels

    def param_shapes(self):
        return {
            f"{self.name}.weight": (self.cout, self.cin, 3, 3),
            f"{self.name}.bias": (self.cout,),
        }

    def fan_in(self):
        return self.cin * 9

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.cin:
            raise ShapeError(f"expected ({self.cin}, H, W) input, got {in_shape}", self.name)
        return (self.cout, in_shape[1], in_shape[2])

    def forward(self, params, x):
        b, c, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1))).transpose(1, 0, 2, 3)
        # channel-major columns: (C*9, B*H*W); cheaper to gather than row-major im2col
        cols = np.empty((c, 3, 3, b, h, w))
        for i in range(3):
            for j in range(3):
                cols[:, i, j] = xp[:, :, i:i + h, j:j + w]
        cols = cols.reshape(c * 9, b * h * w)
        wmat = self._p(params, "weight").reshape(self.cout, c * 9)
        out = wmat @ cols + self._p(params, "bias")[:, None]
        out = out.reshape(self.cout, b, h, w).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(out), (cols, x.shape)

    def backward(self, params, cache, grad_out, need_params=True):
        cols, (b, c, h, w) = cache
        g2 = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(self.cout, b * h * w)
        wmat = self._p(params, "weight").reshape(self.cout, c * 9)
        pg = {}
        if need_params:
            pg[f"{self.name}.weight"] = (g2 @ cols.T).reshape(self.cout, c, 3, 3)
            pg[f"{self.name}.bias"] = g2.sum(axis=1)
        dcols = (wmat.T @ g2).reshape(c, 3, 3, b, h, w)
        dxp = np.zeros((c, b, h + 2, w + 2))
        for i in range(3):
            for j in range(3):
                dxp[:, :, i:i + h, j:j + w] += dcols[:, i, j]
        dx = dxp[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3)
        return np.ascontiguousarray(dx), pg


class Normalize(Layer):
    """Fixed affine input scaling ``(x - mean) / std``; no trainable parameters."""

    def __init__(self, name, mean=0.5, std=0.25):
        super().__init__(name)
        self.mean, self.std = float(mean), float(std)

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, params, x):
        return (x - self.mean) / self.std, None

    def backward(self, params, cache, grad_out, need_params=True):
        return grad_out / self.std, {}


class ReLU(Layer):
    """Rectifier; the subgradient at exactly 0 is 0."""

    def forward(self, params, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, params, mask, grad_out, need_params=True):
        return np.where(mask, grad_out, 0.0), {}


class AvgPool2(Layer):
    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[1] % 2 or in_shape[2] % 2:
            raise ShapeError(f"need (C, even H, even W) input, got {in_shape}", self.name)
        return (in_shape[0], in_shape[1] // 2, in_shape[2] // 2)

    def forward(self, params, x):
        b, c, h, w = x.shape
        out = x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        return out, x.shape

    def backward(self, params, shape, grad_out, need_params=True):
        g = np.repeat(np.repeat(grad_out, 2, axis=2), 2, axis=3) * 0.25
        return g.reshape(shape), {}


class Dense(Layer):
    """Affine map ``x @ W + b`` on the flattened per-sample input; ``W`` is (in, out)."""

    has_params = True

    def __init__(self, name, in_features, out_features):
        super().__init__(name)
        self.din = in_features
        self.dout = out_features

    def param_shapes(self):
        return {
            f"{self.name}.weight": (self.din, self.dout),
            f"{self.name}.bias": (self.dout,),
        }

    def fan_in(self):
        return self.din

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.din:
            raise ShapeError(f"expected {self.din} input features, got shape {in_shape}", self.name)
        return (self.dout,)

    def forward(self, params, x):
        flat = x.reshape(x.shape[0], -1)
        return flat @ self._p(params, "weight") + self._p(params, "bias"), (flat, x.shape)

    def backward(self, params, cache, grad_out, need_params=True):
        flat, shape = cache
        dx = (grad_out @ self._p(params, "weight").T).reshape(shape)
        if not need_params:
            return dx, {}
        return dx, {f"{self.name}.weight": flat.T @ grad_out, f"{self.name}.bias": grad_out.sum(axis=0)}


class PatchEmbed(Layer):
    """Split the image into non-overlapping PxP patches and project each linearly.

    Output is (B, num_patches, dim) with patches in row-major order.
    """

    has_params = True

    def __init__(self, name, in_channels, patch, dim):
        super().__init__(name)
        self.cin = in_channels
        self.patch = patch
        self.dim = dim

    def param_shapes(self):
        k = self.cin * self.patch * self.patch
        return {f"{self.name}.weight": (k, self.dim), f"{self.name}.bias": (self.dim,)}

    def fan_in(self):
        return self.cin * self.patch * self.patch

    def output_shape(self, in_shape):
        p = self.patch
        if len(in_shape) != 3 or in_shape[0] != self.cin or in_shape[1] % p or in_shape[2] % p:
            raise ShapeError(
                f"expected ({self.cin}, H, W) with H, W divisible by {p}, got {in_shape}", self.name
            )
        return ((in_shape[1] // p) * (in_shape[2] // p), self.dim)

    def _patches(self, x):
        b, c, h, w = x.shape
        p = self.patch
        t = x.reshape(b, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5)
        return t.reshape(b, (h // p) * (w // p), c * p * p)

    def forward(self, params, x):
        patches = self._patches(x)
        out = patches @ self._p(params, "weight") + self._p(params, "bias")
        return out, (patches, x.shape)

    def backward(self, params, cache, grad_out, need_params=True):
        patches, (b, c, h, w) = cache
        p = self.patch
        dpatch = grad_out @ self._p(params, "weight").T
        dx = dpatch.reshape(b, h // p, w // p, c, p, p).transpose(0, 3, 1, 4, 2, 5).reshape(b, c, h, w)
        if not need_params:
            return dx, {}
        k = patches.shape[-1]
        dw = patches.reshape(-1, k).T @ grad_out.reshape(-1, self.dim)
        return dx, {f"{self.name}.weight": dw, f"{self.name}.bias": grad_out.sum(axis=(0, 1))}


@dataclass
class LayerGrad:
    param_grads: dict[str, np.ndarray]
    input_grad: np.ndarray


def check_shapes(layers, in_shape) -> tuple[int, ...]:
    """Propagate a per-sample shape through ``layers``; raises ShapeError on mismatch."""
    shape = tuple(in_shape)
    for layer in layers:
        shape = layer.output_shape(shape)
    return shape


def _check_params(layers, params):
    for layer in layers:
        for key, shape in layer.param_shapes().items():
            if key not in params:
                raise ShapeError(f"missing parameter {key}", layer.name)
            if params[key].shape != shape:
                raise ShapeError(f"parameter {key} has shape {params[key].shape}, expected {shape}", layer.name)


def _run_forward(layers, params, batch):
    if batch.ndim < 2:
        raise ShapeError(f"batch must have a leading batch axis, got shape {batch.shape}")
    check_shapes(layers, batch.shape[1:])
    _check_params(layers, params)
    # ReLU would silently map NaN to 0, so reject bad inputs up front
    if not np.isfinite(batch).all():
        raise NonFiniteError("input batch contains non-finite values")
    caches = []
    out = batch
    for layer in layers:
        out, cache = layer.forward(params, out)
        caches.append(cache)
    if not np.isfinite(out).all():
        raise NonFiniteError("forward pass produced non-finite logits")
    return out, caches


def forward_pass(layers, params, batch: np.ndarray) -> np.ndarray:
    """Logits of shape (B, K) for ``batch`` of shape (B, C, H, W)."""
    logits, _ = _run_forward(layers, params, np.asarray(batch, dtype=np.float64))
    return logits


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _validate_targets(targets, logits_shape):
    if targets.shape != logits_shape:
        raise ShapeError(f"targets shape {targets.shape} does not match logits {logits_shape}")
    if (targets < 0).any() or np.abs(targets.sum(axis=1) - 1.0).max(initial=0.0) > 1e-9:
        raise ValueError("each target row must be a probability vector (non-negative, sums to 1)")


def per_sample_xent(logits, targets):
    return -(targets * log_softmax(logits)).sum(axis=1)


def loss_xent(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean soft-label cross-entropy over the batch."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    _validate_targets(targets, logits.shape)
    # clamp the -0.0/rounding residue at saturation
    return max(float(per_sample_xent(logits, targets).mean()), 0.0)


def forward_backward(layers, params, batch, targets, reduction="mean", need_params=True):
    """One forward and backward pass.

    Returns ``(per_sample_losses, logits, LayerGrad)``. With ``reduction="sum"``
    the input gradient of sample i is the gradient of sample i's own loss,
    which is what the attacks want.
    """
    batch = np.asarray(batch, dtype=np.float64)
    logits, caches = _run_forward(layers, params, batch)
    targets = np.asarray(targets, dtype=np.float64)
    _validate_targets(targets, logits.shape)
    losses = per_sample_xent(logits, targets)
    grad = softmax(logits) - targets
    if reduction == "mean":
        grad = grad / batch.shape[0]
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    param_grads = {}
    for layer, cache in zip(reversed(layers), reversed(caches)):
        grad, pg = layer.backward(params, cache, grad, need_params)
        param_grads.update(pg)
    ordered = {k: param_grads[k] for k in params if k in param_grads}
    return losses, logits, LayerGrad(ordered, grad)


def backward(layers, params, batch, targets) -> tuple[float, LayerGrad]:
    """Mean cross-entropy loss and its gradients w.r.t. every parameter and the input."""
    losses, _, grads = forward_backward(layers, params, batch, targets)
    return float(losses.mean()), grads


def relu_margin(layers, params, batch) -> float:
    """Smallest |pre-activation| seen by any ReLU; inf when there is none."""
    out = np.asarray(batch, dtype=np.float64)
    margin = np.inf
    for layer in layers:
        if isinstance(layer, ReLU):
            margin = min(margin, float(np.abs(out).min()))
        out, _ = layer.forward(params, out)
    return margin


def finite_diff_check(layers, params, batch, targets, h: float = 1e-5, coords=None, seed=0) -> float:
    """Max of |analytic - numeric| / max(1, |numeric|) over all parameters and inputs.

    Numeric derivatives are central differences of the mean cross-entropy loss.
    ``coords`` limits each tensor to that many seeded random entries, which keeps
    whole-model checks affordable.
    """
    if not 0 < h <= 1e-2:
        raise ValueError(f"h must lie in (0, 1e-2], got {h}")
    batch = np.array(batch, dtype=np.float64)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = backward(layers, params, batch, targets)

    def loss():
        return float(per_sample_xent(forward_pass(layers, params, batch), targets).mean())

    rng = np.random.default_rng(seed)

    def worst(arr, analytic):
        err = 0.0
        flat = arr.reshape(-1)
        an = analytic.reshape(-1)
        picks = range(flat.size) if coords is None or coords >= flat.size else \
            rng.choice(flat.size, coords, replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            num = (up - down) / (2 * h)
            err = max(err, abs(an[i] - num) / max(1.0, abs(num)))
        return err

    result = worst(batch, grads.input_grad)
    for key, arr in params.items():
        if key in grads.param_grads:
            result = max(result, worst(arr, grads.param_grads[key]))
    return result


class Network:
    """Minimal model wrapper around a layer list and a parameter dict."""

    def __init__(self, layers, params):
        self.layers = layers
        self.tensors = params

    def logits(self, x):
        return forward_pass(self.layers, self.tensors, x)

    def predict(self, x):
        return np.argmax(self.logits(x), axis=1)

    def loss_grad(self, x, targets):
        losses, logits, grads = forward_backward(
            self.layers, self.tensors, x, targets, reduction="sum", need_params=False
        )
        return losses, logits, grads.input_grad
