"""Normal and adversarial training with Mixup, label smoothing, weight decay and EMA.

Adversarial mode solves the min-max problem with a PGD inner adversary:
random start, L-inf, ``at_steps`` steps of ``2 * at_epsilon / at_steps``.
The learning rate is constant with a single x0.1 drop once 2/3 of the epochs
have run.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import parallel
from .attacks import AttackSpec, run_attack
from .errors import DivergenceError, NonFiniteError, ShapeError
from .tensor import forward_backward
from .zoo import ModelWeights

EMA_BETA_DEFAULT = 0.9998
WEIGHT_DECAY_GRID = (0.0, 0.01, 0.05, 0.1)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    label_smoothing: float = 0.0
    mixup_alpha: float = 0.0
    ema_beta: float | None = None
    augment: bool = False
    adversarial: bool = False
    at_epsilon: float = 4 / 255
    at_steps: int = 3
    eval_samples: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.mixup_alpha < 0:
            raise ValueError("mixup_alpha must be >= 0")
        if self.ema_beta is not None and not 0 <= self.ema_beta < 1:
            raise ValueError("ema_beta must lie in [0, 1) or be disabled")
        if self.eval_samples < 0:
            raise ValueError("eval_samples must be >= 0 (0 skips the robust evaluation)")
        if self.adversarial and self.at_steps < 1:
            raise ValueError("adversarial training needs at_steps >= 1")

    @property
    def at_step_size(self):
        return 2 * self.at_epsilon / self.at_steps

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class EmaState:
    shadow: dict[str, np.ndarray]
    beta: float


@dataclass
class TrainResult:
    final: ModelWeights
    ema: ModelWeights | None
    history: list[dict] = field(default_factory=list)


def mixup(x_i, y_i, x_j, y_j, lam: float):
    if not 0 <= lam <= 1:
        raise ValueError(f"mixup ratio must lie in [0, 1], got {lam}")
    x_i, x_j = np.asarray(x_i, dtype=np.float64), np.asarray(x_j, dtype=np.float64)
    y_i, y_j = np.asarray(y_i, dtype=np.float64), np.asarray(y_j, dtype=np.float64)
    if x_i.shape != x_j.shape or y_i.shape != y_j.shape:
        raise ShapeError("mixup operands must have matching shapes")
    if lam == 1:
        return x_i.copy(), y_i.copy()
    if lam == 0:
        return x_j.copy(), y_j.copy()
    return lam * x_i + (1 - lam) * x_j, lam * y_i + (1 - lam) * y_j


def smooth_labels(label, k: int, alpha: float) -> np.ndarray:
    """Soft label(s): 1 - alpha + alpha/k on the true class, alpha/k elsewhere.

    ``label`` may be a single index or an array of indices.
    """
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    labels = np.atleast_1d(np.asarray(label))
    if labels.dtype.kind not in "iu" or (labels < 0).any() or (labels >= k).any():
        raise ValueError(f"class index out of range for {k} classes: {label}")
    out = np.full((labels.size, k), alpha / k)
    out[np.arange(labels.size), labels] = 1 - alpha + alpha / k
    return out[0] if np.ndim(label) == 0 else out


def adversarial_batch(model, x, y, at_epsilon: float, at_steps: int, seed: int, indices=None):
    """PGD examples for training: random start, L-inf, step 2*eps/steps."""
    x = np.asarray(x, dtype=np.float64)
    if at_epsilon == 0:
        return x.copy()
    spec = AttackSpec("PGD", "Linf", at_epsilon, at_steps, 2 * at_epsilon / at_steps,
                      random_start=True, seed=seed)
    return run_attack(model, x, y, spec, indices=indices).adversarial


def sgd_step(weights, grads, velocity, lr, momentum, weight_decay):
    """SGD with momentum; weight decay is added to the gradient inside the step.

    Returns ``(new_weights, new_velocity)`` as fresh dicts.
    """
    new_w, new_v = {}, {}
    for name, w in weights.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, weights {w.shape}")
        v = velocity.get(name) if velocity else None
        v = (momentum * v if v is not None else 0.0) + (g + weight_decay * w)
        new_v[name] = v
        new_w[name] = w - lr * v
    return new_w, new_v


def ema_update(state: EmaState, live) -> EmaState:
    tensors = live.tensors if isinstance(live, ModelWeights) else live
    shadow = {}
    for name, s in state.shadow.items():
        if tensors[name].shape != s.shape:
            raise ShapeError(f"EMA shadow {name} has shape {s.shape}, live {tensors[name].shape}")
        shadow[name] = state.beta * s + (1 - state.beta) * tensors[name]
    return EmaState(shadow, state.beta)


def augment_batch(x, rng):
    """Random horizontal flip and integer shift of up to 2 pixels (zero fill)."""
    out = np.empty_like(x)
    h, w = x.shape[2:]
    for i, img in enumerate(x):
        if rng.random() < 0.5:
            img = img[:, :, ::-1]
        dy, dx = rng.integers(-2, 3, 2)
        shifted = np.zeros_like(img)
        ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
        xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
        shifted[:, yd, xd] = img[:, ys, xs]
        out[i] = shifted
    return out


def robust_accuracy(model, x, y, epsilon, steps=10, seed=0):
    spec = AttackSpec("PGD", "Linf", epsilon, steps, epsilon / 4, random_start=True, seed=seed)
    if epsilon == 0:
        return parallel.accuracy(model, x, y)
    res = run_attack(model, x, y, spec)
    return float(np.count_nonzero(~res.success)) / len(y)


def _lr_at(config, epoch):
    return config.lr * (0.1 if epoch >= math.ceil(2 * config.epochs / 3) else 1.0)


def train(model: ModelWeights, dataset, config: TrainConfig) -> TrainResult:
    """Train a copy of ``model`` on ``dataset.train``; ``dataset.test`` drives the per-epoch metrics."""
    train_set, test_set = dataset.train, dataset.test
    k = model.spec.class_count
    live = model.copy(training_tag="AT" if config.adversarial else model.training_tag)
    velocity = {}
    ema = EmaState({n: t.copy() for n, t in live.tensors.items()}, config.ema_beta) \
        if config.ema_beta is not None else None
    history = []
    n = len(train_set)
    eval_x = test_set.images[:config.eval_samples]
    eval_y = test_set.labels[:config.eval_samples]

    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(n)
        lr = _lr_at(config, epoch)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            x = train_set.images[idx]
            targets = smooth_labels(train_set.labels[idx], k, config.label_smoothing)
            if config.augment:
                x = augment_batch(x, rng)
            if config.mixup_alpha > 0:
                lam = float(rng.beta(config.mixup_alpha, config.mixup_alpha))
                perm = rng.permutation(len(idx))
                x, targets = mixup(x, targets, x[perm], targets[perm], lam)
            if config.adversarial:
                x = adversarial_batch(live, x, targets, config.at_epsilon, config.at_steps,
                                      seed=config.seed * 100003 + epoch * 1009 + b, indices=idx)
            try:
                losses, _, grads = forward_backward(live.layers, live.tensors, x, targets)
            except NonFiniteError as exc:
                raise DivergenceError(epoch) from exc
            loss = float(losses.mean())
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            total += loss * len(idx)
            count += len(idx)
            live.tensors, velocity = sgd_step(live.tensors, grads.param_grads, velocity, lr,
                                              config.momentum, config.weight_decay)
            if ema is not None:
                ema = ema_update(ema, live.tensors)
        row = {"epoch": epoch + 1, "loss": total / max(count, 1)}
        row.update(_evaluate(live, test_set, eval_x, eval_y, config, ""))
        if ema is not None:
            shadow = ModelWeights(live.spec, dict(ema.shadow), live.training_tag, True)
            row.update(_evaluate(shadow, test_set, eval_x, eval_y, config, "ema_"))
        history.append(row)

    ema_weights = None
    if ema is not None:
        ema_weights = ModelWeights(live.spec, {k_: v.copy() for k_, v in ema.shadow.items()},
                                   live.training_tag, True)
    return TrainResult(live, ema_weights, history)


def _evaluate(model, test_set, eval_x, eval_y, config, prefix):
    row = {prefix + "clean_acc": parallel.accuracy(model, test_set.images, test_set.labels)}
    if config.adversarial and len(eval_y):
        row[prefix + "robust_acc"] = robust_accuracy(model, eval_x, eval_y, config.at_epsilon,
                                                     steps=10, seed=config.seed)
    else:
        row[prefix + "robust_acc"] = None
    return row
