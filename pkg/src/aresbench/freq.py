"""Frequency-bias analysis with an ideal radial low-pass filter.

Spectra are unitary (``norm="ortho"``) and centre-shifted so the radial
distance to the DC bin is measured from ``(H // 2, W // 2)``. A sample's
minimum cutoff is the first bandwidth on the grid at which the filtered
image is classified correctly; f_bias is the mean cutoff over samples the
model gets right on clean input. Lower f_bias means the model leans on
low-frequency content.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import parallel


class _Excluded:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Excluded"

    def __reduce__(self):
        return (_Excluded, ())


Excluded = _Excluded()


def dft2(channel: np.ndarray) -> np.ndarray:
    return np.fft.fft2(np.asarray(channel, dtype=np.float64), norm="ortho")


def idft2(spectrum: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(spectrum, norm="ortho")


def b_max(h: int, w: int) -> int:
    return math.ceil(math.hypot(h / 2, w / 2))


def radial_mask(h: int, w: int, b: int) -> np.ndarray:
    """Boolean mask of centred-spectrum bins within radius ``b`` of DC."""
    yy, xx = np.mgrid[0:h, 0:w]
    return np.hypot(yy - h // 2, xx - w // 2) <= b


def lowpass(image: np.ndarray, b: int, clip: bool = True) -> np.ndarray:
    """Keep frequencies within radius ``b`` per channel; works on (C,H,W) or (N,C,H,W)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2:]
    top = b_max(h, w)
    if not 0 <= b <= top or int(b) != b:
        raise ValueError(f"bandwidth must be an integer in 0..{top}, got {b}")
    if b == top:
        # every bin lies within b_max of DC, so the filter is the identity
        return image.copy()
    spec = np.fft.fftshift(np.fft.fft2(image, norm="ortho"), axes=(-2, -1))
    spec = spec * radial_mask(h, w, int(b))
    out = np.fft.ifft2(np.fft.ifftshift(spec, axes=(-2, -1)), norm="ortho").real
    return np.clip(out, 0.0, 1.0) if clip else out


def full_grid(h: int, w: int) -> list[int]:
    return list(range(b_max(h, w) + 1))


def _correct_per_band(model, x, y, grid):
    """(len(grid), N) boolean grid of correct predictions on low-passed inputs."""
    return np.stack([parallel.predict(model, lowpass(x, b)) == y for b in grid])


def min_cutoff(model, x, y, grid=None):
    """Per-sample minimum cutoff, or ``Excluded`` where the clean input is misclassified.

    Accepts one (C,H,W) image with a scalar label, or a batch.
    """
    single = np.ndim(y) == 0
    x = np.asarray(x, dtype=np.float64)
    if single:
        x, y = x[None], np.asarray([y])
    y = np.asarray(y)
    grid = sorted(set(int(b) for b in (grid if grid is not None else full_grid(*x.shape[-2:]))))
    clean = parallel.predict(model, x) == y
    hits = _correct_per_band(model, x, y, grid)
    out = []
    for i in range(len(y)):
        if not clean[i]:
            out.append(Excluded)
            continue
        first = np.flatnonzero(hits[:, i])
        out.append(grid[first[0]] if len(first) else grid[-1])
    return out[0] if single else out


@dataclass(frozen=True)
class FreqReport:
    bandwidth_grid: tuple[int, ...]
    acc_lpb: tuple[float, ...]
    per_sample_fc: tuple
    f_bias: float
    n_prime: int
    clean_accuracy: float

    def to_json(self) -> str:
        fc = [None if v is Excluded else v for v in self.per_sample_fc]
        return json.dumps({"bandwidth_grid": list(self.bandwidth_grid), "acc_lpb": list(self.acc_lpb),
                           "per_sample_fc": fc, "f_bias": self.f_bias, "n_prime": self.n_prime,
                           "clean_accuracy": self.clean_accuracy}, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        rows = ["bandwidth,normalized_accuracy"]
        rows += [f"{b},{float(a)!r}" for b, a in zip(self.bandwidth_grid, self.acc_lpb)]
        return "\n".join(rows) + "\n"


def frequency_bias(model, test_set, grid=None) -> FreqReport:
    """ACC-LPB curve and f_bias for ``model`` on ``test_set``.

    ACC-LPB at bandwidth b counts samples that are correct both clean and
    after filtering, divided by the clean-correct count, so it lies in [0, 1].
    """
    x = np.asarray(test_set.images, dtype=np.float64)
    y = np.asarray(test_set.labels)
    grid = sorted(set(int(b) for b in (grid if grid is not None else full_grid(*x.shape[-2:]))))
    clean = parallel.predict(model, x) == y
    n_prime = int(np.count_nonzero(clean))
    if n_prime == 0:
        raise ValueError("clean accuracy is 0; frequency bias is undefined")
    hits = _correct_per_band(model, x, y, grid) & clean[None, :]
    acc = tuple(float(np.count_nonzero(row)) / n_prime for row in hits)
    fc = []
    for i in range(len(y)):
        if not clean[i]:
            fc.append(Excluded)
            continue
        first = np.flatnonzero(hits[:, i])
        fc.append(grid[first[0]] if len(first) else grid[-1])
    kept = [v for v in fc if v is not Excluded]
    return FreqReport(tuple(grid), acc, tuple(fc), float(sum(kept)) / len(kept), n_prime,
                      n_prime / len(y))
