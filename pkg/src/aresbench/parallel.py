"""Fixed-size chunking with an optional thread pool.

Work is always cut into chunks of ``CHUNK`` samples regardless of the thread
count, so every numeric result is independent of ``--threads``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 100
_threads = 1


def set_threads(n: int):
    global _threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def get_threads() -> int:
    return _threads


def chunk_slices(n: int, size: int = CHUNK) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def map_chunks(fn, n: int, size: int = CHUNK) -> list:
    slices = chunk_slices(n, size)
    if _threads == 1 or len(slices) < 2:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(fn, slices))


def predict(model, x: np.ndarray) -> np.ndarray:
    if len(x) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(map_chunks(lambda s: model.predict(x[s]), len(x)))


def accuracy(model, x, y) -> float:
    return float(np.count_nonzero(predict(model, x) == np.asarray(y))) / len(y)
