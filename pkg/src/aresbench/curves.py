"""Robustness curves, corruption severity curves and CE/mCE aggregation.

A robustness curve is built from per-sample minimum fooling budgets: the
accuracy at budget ``eps`` is the fraction of samples whose minimum budget is
strictly larger than ``eps``. Samples the model already gets wrong have a
minimum budget of 0, so the curve starts at the clean accuracy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import parallel
from .attacks import AttackSpec, run_attack
from .data import CORRUPTIONS, SEVERITIES, CorruptionSpec, corrupt_dataset

DEFAULT_TOL = 1 / 510
DEFAULT_EPS_MAX = 32 / 255


class _NotFooled:
    """Sentinel for samples the attack never fools within ``eps_max``."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NotFooled"

    def __reduce__(self):
        return (_NotFooled, ())


NotFooled = _NotFooled()


@dataclass(frozen=True)
class MinEpsRecord:
    sample_index: int
    min_epsilon: float | _NotFooled
    clean_correct: bool

    def __post_init__(self):
        if not self.clean_correct and self.min_epsilon is not NotFooled and self.min_epsilon != 0:
            raise ValueError("clean-misclassified samples must have min_epsilon 0")
        if self.min_epsilon is not NotFooled and self.min_epsilon < 0:
            raise ValueError("min_epsilon must be >= 0")

    def exceeds(self, eps) -> bool:
        return self.min_epsilon is NotFooled or self.min_epsilon > eps

    def to_dict(self):
        m = None if self.min_epsilon is NotFooled else float(self.min_epsilon)
        return {"sample_index": self.sample_index, "min_epsilon": m, "clean_correct": self.clean_correct}


@dataclass(frozen=True)
class RobustnessCurve:
    epsilon_grid: tuple[float, ...]
    accuracy: tuple[float, ...]
    attack_tag: str = ""

    def __post_init__(self):
        if any(b > a for a, b in zip(self.accuracy, self.accuracy[1:])):
            raise AssertionError("robustness curve must be non-increasing")

    def to_csv(self) -> str:
        rows = ["epsilon,accuracy"]
        rows += [f"{_num(e)},{_num(a)}" for e, a in zip(self.epsilon_grid, self.accuracy)]
        return "\n".join(rows) + "\n"

    def to_json(self) -> str:
        return _dumps({"epsilon_grid": list(self.epsilon_grid), "accuracy": list(self.accuracy),
                       "attack_tag": self.attack_tag})


@dataclass(frozen=True)
class CEReport:
    per_corruption_ce: dict
    mce: float
    baseline_tag: str
    baseline_ce: dict

    def to_json(self) -> str:
        return _dumps({"per_corruption_ce": self.per_corruption_ce, "mce": self.mce,
                       "baseline_tag": self.baseline_tag, "baseline_ce": self.baseline_ce})


def _num(v) -> str:
    return repr(float(v))


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _search_template(template: AttackSpec) -> AttackSpec:
    # a fixed, deterministic attack keeps success(eps) as close to monotone as possible
    return replace(template, random_start=False)


def _fooled(model, x, y, spec, indices, eps):
    """Attack success per sample at per-sample budgets ``eps``."""
    return run_attack(model, x, y, spec, indices=indices, epsilon=eps).success


def min_epsilon_search(model, x, y, attack_template: AttackSpec, eps_max: float = DEFAULT_EPS_MAX,
                       tol: float = DEFAULT_TOL, indices=None) -> list[MinEpsRecord]:
    """Per-sample minimum fooling budget by bisection on ``[0, eps_max]``.

    Every sample runs the same number of halvings, so the bracket width ends
    at or below ``tol`` and the returned value is the upper (successful) end.
    The template's budget is ignored; its step size scales with each probe.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if eps_max <= 0:
        raise ValueError("eps_max must be > 0")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n = len(x)
    indices = np.arange(n) if indices is None else np.asarray(indices)
    spec = _search_template(attack_template)

    correct = parallel.predict(model, x) == y
    active = np.flatnonzero(correct)
    hi = np.full(n, float(eps_max))
    lo = np.zeros(n)
    fooled_at_max = np.zeros(n, bool)
    if len(active):
        fooled_at_max[active] = _fooled(model, x[active], y[active], spec, indices[active], hi[active])
    live = np.flatnonzero(fooled_at_max)
    rounds = max(0, math.ceil(math.log2(eps_max / tol) - 1e-12))
    for _ in range(rounds):
        if not len(live):
            break
        mid = 0.5 * (lo[live] + hi[live])
        ok = _fooled(model, x[live], y[live], spec, indices[live], mid)
        hi[live] = np.where(ok, mid, hi[live])
        lo[live] = np.where(ok, lo[live], mid)

    out = []
    for i in range(n):
        if not correct[i]:
            m = 0.0
        elif fooled_at_max[i]:
            m = float(hi[i])
        else:
            m = NotFooled
        out.append(MinEpsRecord(int(indices[i]), m, bool(correct[i])))
    return out


def linear_scan_epsilon(model, x, y, attack_template: AttackSpec, eps_max: float = DEFAULT_EPS_MAX,
                        tol: float = DEFAULT_TOL, indices=None) -> list[MinEpsRecord]:
    """Oracle: first budget on the grid ``0, tol, 2*tol, ..., eps_max`` that fools the model."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n = len(x)
    indices = np.arange(n) if indices is None else np.asarray(indices)
    spec = _search_template(attack_template)
    steps = int(math.floor(eps_max / tol + 1e-9))
    grid = [k * tol for k in range(steps + 1)]
    if eps_max - grid[-1] > 1e-12:
        grid.append(eps_max)

    correct = parallel.predict(model, x) == y
    found = np.full(n, np.nan)
    found[~correct] = 0.0
    for eps in grid[1:]:
        live = np.flatnonzero(np.isnan(found))
        if not len(live):
            break
        ok = _fooled(model, x[live], y[live], spec, indices[live], np.full(len(live), eps))
        found[live[ok]] = eps
    return [MinEpsRecord(int(indices[i]), NotFooled if np.isnan(found[i]) else float(found[i]),
                         bool(correct[i])) for i in range(n)]


def records_agree(a: MinEpsRecord, b: MinEpsRecord, tol: float) -> bool:
    if a.min_epsilon is NotFooled or b.min_epsilon is NotFooled:
        return a.min_epsilon is b.min_epsilon
    return abs(a.min_epsilon - b.min_epsilon) <= tol + 1e-12


def build_curve(records, epsilon_grid, attack_tag: str = "") -> RobustnessCurve:
    """Accuracy at each budget: fraction of records whose minimum budget exceeds it."""
    records = list(records)
    if not records:
        raise ValueError("cannot build a curve from zero records")
    grid = tuple(float(e) for e in epsilon_grid)
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("epsilon_grid must be ascending")
    n = len(records)
    acc = tuple(sum(r.exceeds(e) for r in records) / n for e in grid)
    return RobustnessCurve(grid, acc, attack_tag)


def robustness_curve(model, x, y, attack_template: AttackSpec, epsilon_grid,
                     eps_max: float = DEFAULT_EPS_MAX, tol: float = DEFAULT_TOL):
    records = min_epsilon_search(model, x, y, attack_template, eps_max, tol)
    return build_curve(records, epsilon_grid, attack_template.digest()), records


def severity_curve(model, test_set, kinds=CORRUPTIONS, seed: int = 0) -> list[float]:
    """Accuracy at severity 0 (clean) through 5, averaged over ``kinds``."""
    x, y = test_set.images, test_set.labels
    out = [parallel.accuracy(model, x, y)]
    for s in SEVERITIES:
        accs = [parallel.accuracy(model, corrupt_dataset(x, CorruptionSpec(k, s, seed)), y) for k in kinds]
        out.append(float(np.mean(accs)))
    return out


def error_rate(predictions, labels) -> float:
    """Mean misclassification over a (severities, N) prediction grid."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.ndim != 2 or predictions.shape[1] != len(labels):
        raise ValueError("predictions must have shape (severities, N)")
    return float(np.count_nonzero(predictions != labels[None, :])) / predictions.size


def corruption_predictions(model, test_set, kind: str, severities=SEVERITIES, seed: int = 0):
    x = test_set.images
    return np.stack([parallel.predict(model, corrupt_dataset(x, CorruptionSpec(kind, s, seed)))
                     for s in severities])


def corruption_error(model, test_set, kind: str, severities=SEVERITIES, seed: int = 0) -> float:
    """Misclassification rate over all samples and severities of one corruption."""
    return error_rate(corruption_predictions(model, test_set, kind, severities, seed), test_set.labels)


def mean_corruption_error(model, test_set, baseline, kinds=CORRUPTIONS, severities=SEVERITIES,
                          seed: int = 0) -> CEReport:
    """Average over kinds of the model's CE divided by the baseline's CE."""
    base = {k: corruption_error(baseline, test_set, k, severities, seed) for k in kinds}
    for k, v in base.items():
        if v == 0:
            raise ValueError(f"baseline corruption error is 0 for {k}; mCE is undefined")
    if model is baseline:
        ce = dict(base)
    else:
        ce = {k: corruption_error(model, test_set, k, severities, seed) for k in kinds}
    mce = sum(ce[k] / base[k] for k in kinds) / len(kinds)
    tag = baseline.digest() if hasattr(baseline, "digest") else ""
    return CEReport(ce, mce, tag, base)
