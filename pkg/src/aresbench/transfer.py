"""Black-box transferability matrices.

Adversarial examples are crafted once per source model and then scored on
every target. Row ``s``, column ``t`` holds target ``t``'s accuracy on the
examples crafted against source ``s``, so the diagonal is plain white-box
robust accuracy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import parallel
from .attacks import AttackSpec, run_attack

TRANSFER_METHODS = ("MIM", "DIM", "TIM", "SINIFGSM", "VMIFGSM", "PGD")


@dataclass(frozen=True)
class TransferMatrix:
    source_tags: tuple[str, ...]
    target_tags: tuple[str, ...]
    robust_accuracy: np.ndarray
    attack_tag: str
    labels: tuple[str, ...] = ()

    def to_csv(self) -> str:
        names = self.labels or self.target_tags
        rows = ["source," + ",".join(names)]
        for name, row in zip(self.labels or self.source_tags, self.robust_accuracy):
            rows.append(name + "," + ",".join(repr(float(v)) for v in row))
        return "\n".join(rows) + "\n"

    def to_json(self) -> str:
        return json.dumps({"source_tags": list(self.source_tags), "target_tags": list(self.target_tags),
                           "labels": list(self.labels), "attack_tag": self.attack_tag,
                           "robust_accuracy": self.robust_accuracy.tolist()},
                          indent=2, sort_keys=True) + "\n"


def transfer_matrix(models: list, dataset, attack: AttackSpec, labels=None) -> TransferMatrix:
    """Score every target on examples crafted against every source."""
    if not models:
        raise ValueError("transfer_matrix needs at least one model")
    if attack.method not in TRANSFER_METHODS:
        raise ValueError(f"transfer attack must be one of {TRANSFER_METHODS}, got {attack.method!r}")
    x, y = np.asarray(dataset.images, dtype=np.float64), np.asarray(dataset.labels)
    tags = tuple(m.digest() for m in models)
    out = np.empty((len(models), len(models)))
    for s, source in enumerate(models):
        x_adv = run_attack(source, x, y, attack).adversarial
        for t, target in enumerate(models):
            out[s, t] = parallel.accuracy(target, x_adv, y)
    return TransferMatrix(tags, tags, out, attack.digest(), tuple(labels) if labels else ())


def whitebox_accuracy(model, dataset, attack: AttackSpec) -> float:
    """Accuracy of ``model`` on examples crafted against itself."""
    x, y = np.asarray(dataset.images, dtype=np.float64), np.asarray(dataset.labels)
    return parallel.accuracy(model, run_attack(model, x, y, attack).adversarial, y)


def family_means(matrix: TransferMatrix, families) -> tuple[float, float]:
    """Mean off-diagonal target accuracy for (cross-family, within-family) pairs."""
    cross, within = [], []
    n = len(families)
    for s in range(n):
        for t in range(n):
            if s == t:
                continue
            (cross if families[s] != families[t] else within).append(matrix.robust_accuracy[s, t])
    return (float(np.mean(cross)) if cross else float("nan"),
            float(np.mean(within)) if within else float("nan"))
