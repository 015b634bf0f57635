"""Gradient-based attacks under L-inf and L2 threat models.

All attacks are untargeted and maximize cross-entropy. Update rules:

* FGSM      x' = clip(x + eps * sign(grad))            (L2: eps * grad / |grad|_2)
* PGD       optional uniform start in the ball, then x <- P(x + a * sign(grad))
* MIM       g <- mu * g + grad / |grad|_1 ;  x <- P(x + a * sign(g))
* DIM       MIM with the gradient taken through a random resize-and-pad T(x)
* TIM       MIM with the gradient smoothed by a normalized Gaussian kernel
* SI-NI     Nesterov look-ahead x + a*mu*g, gradient averaged over x/2^i, i < m
* VMI       MIM on grad + v, v = mean_i grad(x + u_i) - grad(x), u_i ~ U[-b*eps, b*eps]

``P`` projects onto the eps-ball around the clean input and clips to [0, 1].
Under L2 the sign step is replaced by ``a * d / |d|_2``. Iterative black-box
methods default to ``a = eps / steps``.

Randomness is drawn from per-sample generators keyed by
``(seed, sample index, purpose)`` so batching and threading cannot change a
result. When a sample's gradient is exactly zero the step uses a seeded random
unit direction instead.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from . import parallel
from .errors import ShapeError
from .tensor import one_hot

METHODS = ("FGSM", "PGD", "MIM", "DIM", "TIM", "SINIFGSM", "VMIFGSM")
NORMS = ("Linf", "L2")
MOMENTUM_METHODS = ("MIM", "DIM", "TIM", "SINIFGSM", "VMIFGSM")

PRESETS = {
    "whitebox-linf": ("Linf", 4 / 255),
    "whitebox-l2": ("L2", 0.5),
    "blackbox-linf": ("Linf", 8 / 255),
}

# rng stream purposes
_FALLBACK, _TRANSFORM, _START, _VARIANCE = 0, 1, 2, 3


@dataclass(frozen=True)
class AttackSpec:
    method: str = "PGD"
    norm: str = "Linf"
    epsilon: float = 4 / 255
    steps: int = 1
    step_size: float | None = None
    random_start: bool = False
    decay_mu: float = 1.0
    diversity_prob: float = 0.7
    kernel_size: int = 15
    kernel_sigma: float = 3.0
    scale_copies: int = 5
    beta: float = 1.5
    sample_count: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown attack method {self.method!r}; expected one of {METHODS}")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}; expected one of {NORMS}")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.decay_mu < 0:
            raise ValueError("decay_mu must be >= 0")
        if not 0 <= self.diversity_prob <= 1:
            raise ValueError("diversity_prob must lie in [0, 1]")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.kernel_sigma < 0:
            raise ValueError("kernel_sigma must be >= 0")
        if self.scale_copies < 1 or self.sample_count < 1:
            raise ValueError("scale_copies and sample_count must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    def default_step(self, eps):
        if self.method == "FGSM":
            return eps
        if self.method == "PGD":
            return eps / 4 if self.norm == "Linf" else 2 * eps
        return eps / self.steps

    def resolved_step_size(self) -> float:
        return self.step_size if self.step_size is not None else self.default_step(self.epsilon)

    def step_for(self, eps):
        """Step size for a (possibly per-sample) budget, keeping the template's step/eps ratio."""
        eps = np.asarray(eps, dtype=np.float64)
        if self.step_size is None or self.method == "FGSM":
            return self.default_step(eps)
        if self.epsilon == 0:
            return np.full_like(eps, self.step_size)
        return eps * (self.step_size / self.epsilon)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def preset(name: str, method: str, **overrides) -> AttackSpec:
    """Default configuration of ``method`` under a named threat model.

    whitebox-linf: eps 4/255; FGSM step 4/255; PGD 100 steps of 1/255 with random start.
    whitebox-l2:   eps 0.5; PGD 100 steps of 1.0 with random start.
    blackbox-linf: eps 8/255.
    Momentum methods: 20 steps, mu = 1.0; DIM p = 0.7; TIM 15x15 kernel, sigma 3;
    SI-NI 5 scale copies; VMI beta 1.5 with 10 samples.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    norm, eps = PRESETS[name]
    if method == "FGSM":
        kw = dict(steps=1, step_size=eps)
    elif method == "PGD":
        kw = dict(steps=100, step_size=eps / 4 if norm == "Linf" else 2 * eps, random_start=True)
    elif method in MOMENTUM_METHODS:
        kw = dict(steps=20, decay_mu=1.0)
    else:
        raise ValueError(f"unknown attack method {method!r}")
    kw.update(overrides)
    return AttackSpec(method=method, norm=norm, epsilon=eps, **kw)


@dataclass
class AttackResult:
    adversarial: np.ndarray
    success: np.ndarray
    final_loss: np.ndarray
    queries: int
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# shared pieces


def _flat_norm(a, order):
    flat = a.reshape(a.shape[0], -1)
    if order == 1:
        return np.abs(flat).sum(axis=1)
    return np.sqrt((flat * flat).sum(axis=1))


def _bcast(v, x):
    return np.asarray(v, dtype=np.float64).reshape((-1,) + (1,) * (x.ndim - 1))


def project(delta: np.ndarray, norm: str, epsilon) -> np.ndarray:
    """Project per-sample perturbations onto the eps-ball (batched along axis 0)."""
    if norm == "Linf":
        eps = _bcast(epsilon, delta) if np.ndim(epsilon) else epsilon
        return np.clip(delta, -eps, eps)
    if norm == "L2":
        n = _flat_norm(delta, 2)
        eps = np.broadcast_to(np.asarray(epsilon, dtype=np.float64), n.shape)
        scale = np.ones_like(n)
        over = n > eps
        scale[over] = eps[over] / n[over]
        return delta * _bcast(scale, delta)
    raise ValueError(f"unknown norm {norm!r}")


def _constrain(x_new, x0, norm, eps):
    return np.clip(x0 + project(x_new - x0, norm, eps), 0.0, 1.0)


class _Ctx:
    """Per-chunk state: targets, per-sample budgets, rng streams, query counter."""

    def __init__(self, model, x, y, spec, indices, eps, alpha):
        self.model = model
        self.spec = spec
        self.x0 = x
        y = np.asarray(y)
        k = _class_count(model, x)
        if y.ndim == 1:
            self.labels = y.astype(np.int64)
            self.targets = one_hot(self.labels, k)
        else:
            self.targets = y.astype(np.float64)
            self.labels = np.argmax(self.targets, axis=1)
        self.eps = eps
        self.alpha = alpha
        self.indices = indices
        self._rngs = {}
        self.queries = 0

    def rng(self, purpose, i):
        key = (purpose, i)
        if key not in self._rngs:
            self._rngs[key] = np.random.default_rng([self.spec.seed, int(self.indices[i]), purpose])
        return self._rngs[key]

    def grad(self, x):
        self.queries += 1
        return self.model.loss_grad(x, self.targets)

    def fallback(self, g):
        """Replace all-zero per-sample gradients by seeded random unit directions."""
        dead = np.flatnonzero(_flat_norm(g, 1) == 0)
        if dead.size:
            g = g.copy()
            for i in dead:
                d = self.rng(_FALLBACK, i).standard_normal(g.shape[1:])
                g[i] = d / np.sqrt((d * d).sum())
        return g

    def step(self, x, direction):
        if self.spec.norm == "Linf":
            move = np.sign(direction)
        else:
            move = direction / _bcast(_flat_norm(direction, 2), direction)
        return _constrain(x + _bcast(self.alpha, x) * move, self.x0, self.spec.norm, self.eps)

    def finish(self, x_adv, extras=None):
        logits = self.model.logits(x_adv)
        losses = -(self.targets * _log_softmax(logits)).sum(axis=1)
        success = np.argmax(logits, axis=1) != self.labels
        return AttackResult(x_adv, success, losses, self.queries, extras or {})


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _class_count(model, x):
    spec = getattr(model, "spec", None)
    if spec is not None and hasattr(spec, "class_count"):
        return spec.class_count
    return model.logits(x[:1]).shape[1]


# ---------------------------------------------------------------------------
# method bodies (operate on one chunk)


def _fgsm(ctx):
    _, _, g = ctx.grad(ctx.x0)
    g = ctx.fallback(g)
    # FGSM's step is the budget itself
    ctx.alpha = ctx.eps
    return ctx.finish(ctx.step(ctx.x0, g))


def _random_start(ctx):
    x0, spec = ctx.x0, ctx.spec
    noise = np.empty_like(x0)
    for i in range(len(x0)):
        rng = ctx.rng(_START, i)
        eps_i = float(np.broadcast_to(ctx.eps, (len(x0),))[i])
        if spec.norm == "Linf":
            noise[i] = rng.uniform(-eps_i, eps_i, x0.shape[1:])
        else:
            d = rng.standard_normal(x0.shape[1:])
            d /= np.sqrt((d * d).sum())
            radius = eps_i * rng.random() ** (1.0 / d.size)
            noise[i] = d * radius
    return _constrain(x0 + noise, x0, spec.norm, ctx.eps)


def _pgd(ctx):
    spec = ctx.spec
    x = _random_start(ctx) if spec.random_start else ctx.x0.copy()
    n = len(x)
    best = x.copy()
    best_loss = np.full(n, -np.inf)
    found = np.zeros(n, dtype=bool)

    def consider(xi, losses, logits):
        wrong = np.argmax(logits, axis=1) != ctx.labels
        better = wrong & (losses > best_loss)
        best[better] = xi[better]
        best_loss[better] = losses[better]
        found[wrong] = True

    for _ in range(spec.steps):
        losses, logits, g = ctx.grad(x)
        consider(x, losses, logits)
        x = ctx.step(x, ctx.fallback(g))
    logits = ctx.model.logits(x)
    consider(x, -(ctx.targets * _log_softmax(logits)).sum(axis=1), logits)
    out = np.where(_bcast(found, x), best, x)
    return ctx.finish(out)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized (size x size) Gaussian; sigma = 0 gives the discrete delta."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    k1 = _gaussian_1d(size, sigma)
    return np.outer(k1, k1)


def _gaussian_1d(size, sigma):
    r = np.arange(size) - size // 2
    if sigma == 0:
        k = (r == 0).astype(np.float64)
    else:
        k = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return k / k.sum()


def smooth_gradient(g: np.ndarray, size: int, sigma: float) -> np.ndarray:
    """Per-channel zero-padded convolution of (B, C, H, W) with the Gaussian kernel."""
    k1 = _gaussian_1d(size, sigma)
    out = convolve1d(g, k1, axis=2, mode="constant", cval=0.0)
    return convolve1d(out, k1, axis=3, mode="constant", cval=0.0)


def diverse_input_params(rng, shape, prob):
    """Draw one random resize-and-pad transform: (resized side, top, left) or None."""
    _, h, w = shape
    if rng.random() >= prob:
        return None
    lo = math.ceil(0.75 * min(h, w))
    r = int(rng.integers(lo, min(h, w) + 1))
    top = int(rng.integers(0, h - r + 1))
    left = int(rng.integers(0, w - r + 1))
    return r, top, left


def _resize_index(n_out, n_in):
    return (np.arange(n_out) * n_in) // n_out


def diverse_input(x, params):
    """Apply a nearest-neighbour resize to r x r, zero-padded back at (top, left)."""
    if params is None:
        return x.copy()
    r, top, left = params
    c, h, w = x.shape
    rows, cols = _resize_index(r, h), _resize_index(r, w)
    out = np.zeros_like(x)
    out[:, top:top + r, left:left + r] = x[:, rows][:, :, cols]
    return out


def diverse_input_adjoint(g, params):
    """Gradient of ``diverse_input`` pulled back to the untransformed image."""
    if params is None:
        return g.copy()
    r, top, left = params
    c, h, w = g.shape
    rows, cols = _resize_index(r, h), _resize_index(r, w)
    out = np.zeros_like(g)
    np.add.at(out, (slice(None), rows[:, None], cols[None, :]), g[:, top:top + r, left:left + r])
    return out


def _momentum(ctx, gradient_fn):
    spec = ctx.spec
    x = ctx.x0.copy()
    g = np.zeros_like(x)
    for _ in range(spec.steps):
        d = ctx.fallback(gradient_fn(x, g))
        g = spec.decay_mu * g + d / _bcast(_flat_norm(d, 1), d)
        x = ctx.step(x, g)
    return ctx.finish(x, {"momentum": g})


def _mim(ctx):
    return _momentum(ctx, lambda x, g: ctx.grad(x)[2])


def _dim(ctx):
    spec = ctx.spec

    def gradient(x, g):
        params = [diverse_input_params(ctx.rng(_TRANSFORM, i), x.shape[1:], spec.diversity_prob)
                  for i in range(len(x))]
        xt = np.stack([diverse_input(x[i], p) for i, p in enumerate(params)])
        gt = ctx.grad(xt)[2]
        return np.stack([diverse_input_adjoint(gt[i], p) for i, p in enumerate(params)])

    return _momentum(ctx, gradient)


def _tim(ctx):
    spec = ctx.spec
    return _momentum(ctx, lambda x, g: smooth_gradient(ctx.grad(x)[2], spec.kernel_size, spec.kernel_sigma))


def scale_invariant_gradient(ctx, x_nes):
    """Mean over i < m of d/dx L(x / 2^i) (chain rule keeps the 2^-i factor)."""
    m = ctx.spec.scale_copies
    total = np.zeros_like(x_nes)
    for i in range(m):
        s = 0.5 ** i
        total += s * ctx.grad(x_nes * s)[2]
    return total / m


def _si_ni(ctx):
    spec = ctx.spec

    def gradient(x, g):
        x_nes = x + _bcast(ctx.alpha, x) * spec.decay_mu * g
        return scale_invariant_gradient(ctx, x_nes)

    return _momentum(ctx, gradient)


def _vmi(ctx):
    spec = ctx.spec
    state = {"v": None}
    n = len(ctx.x0)
    radius = np.broadcast_to(np.asarray(ctx.eps, dtype=np.float64), (n,)) * spec.beta

    def gradient(x, g):
        grad = ctx.grad(x)[2]
        v = state["v"] if state["v"] is not None else np.zeros_like(grad)
        neighbours = np.zeros_like(grad)
        for _ in range(spec.sample_count):
            u = np.stack([
                ctx.rng(_VARIANCE, i).uniform(-radius[i], radius[i], x.shape[1:]) if radius[i] > 0
                else np.zeros(x.shape[1:])
                for i in range(n)
            ])
            neighbours += ctx.grad(x + u)[2]
        state["v"] = neighbours / spec.sample_count - grad
        return grad + v

    return _momentum(ctx, gradient)


_IMPL = {
    "FGSM": _fgsm, "PGD": _pgd, "MIM": _mim, "DIM": _dim,
    "TIM": _tim, "SINIFGSM": _si_ni, "VMIFGSM": _vmi,
}


def run_attack(model, x, y, spec: AttackSpec, indices=None, epsilon=None) -> AttackResult:
    """Run ``spec`` on a batch.

    ``indices`` are the global sample indices that key the rng streams
    (default ``0..B-1``). ``epsilon`` optionally overrides the budget per
    sample; step sizes then follow ``spec.step_for``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) != len(y):
        raise ShapeError(f"{len(x)} images but {len(y)} labels")
    n = len(x)
    if indices is None:
        indices = np.arange(n)
    indices = np.asarray(indices)
    eps = np.full(n, spec.epsilon) if epsilon is None else np.broadcast_to(
        np.asarray(epsilon, dtype=np.float64), (n,)).copy()
    if epsilon is None and spec.step_size is not None:
        alpha = np.full(n, spec.step_size)
    else:
        alpha = np.broadcast_to(spec.step_for(eps), (n,)).copy()
    impl = _IMPL[spec.method]

    def work(s):
        ctx = _Ctx(model, x[s], y[s], spec, indices[s], eps[s], alpha[s])
        return impl(ctx)

    parts = parallel.map_chunks(work, n)
    if not parts:
        return AttackResult(x.copy(), np.zeros(0, bool), np.zeros(0), 0)
    extras = {}
    if "momentum" in parts[0].extras:
        extras["momentum"] = np.concatenate([p.extras["momentum"] for p in parts])
    return AttackResult(
        np.concatenate([p.adversarial for p in parts]),
        np.concatenate([p.success for p in parts]),
        np.concatenate([p.final_loss for p in parts]),
        parts[0].queries,
        extras,
    )


def _method_entry(method):
    def attack(model, x, y, spec: AttackSpec, indices=None) -> AttackResult:
        if spec.method != method:
            raise ValueError(f"{method.lower()}() needs spec.method == {method!r}, got {spec.method!r}")
        return run_attack(model, x, y, spec, indices)

    attack.__name__ = method.lower()
    attack.__doc__ = f"Run {method} with ``spec`` on a batch; see the module docstring for the update."
    return attack


fgsm = _method_entry("FGSM")
pgd = _method_entry("PGD")
mim = _method_entry("MIM")
dim = _method_entry("DIM")
tim = _method_entry("TIM")
si_ni_fgsm = _method_entry("SINIFGSM")
vmi_fgsm = _method_entry("VMIFGSM")


def check_constraints(x0, x_adv, norm, epsilon, tol=1e-9) -> np.ndarray:
    """Per-sample flag: inside the eps-ball (within tol) and inside the [0, 1] box."""
    delta = x_adv - x0
    size = _flat_norm(delta, 2) if norm == "L2" else np.abs(delta.reshape(len(delta), -1)).max(axis=1)
    in_ball = size <= np.asarray(epsilon) + tol
    flat = x_adv.reshape(len(x_adv), -1)
    in_box = (flat >= 0).all(axis=1) & (flat <= 1).all(axis=1)
    return in_ball & in_box

