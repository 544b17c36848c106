"""NumPy implementation of the compiled kernels."""
from __future__ import annotations

import numpy as np


def doa_pair_histogram(mas: np.ndarray, r: np.ndarray) -> np.ndarray:
    mas = np.ascontiguousarray(mas, dtype=np.float64)
    r = np.ascontiguousarray(r, dtype=np.int8)
    n, m = r.shape
    if mas.shape[0] != n:
        raise ValueError("mastery and response table disagree on student count")
    right = (r == 1).astype(np.float64)
    wrong = (r == 0).astype(np.float64)
    num = np.rint(right @ wrong.T).astype(np.int64)  # a right, b wrong
    den = num + num.T
    keep = (mas[:, None] > mas[None, :]) & (den > 0)
    flat = np.bincount(den[keep] * (m + 1) + num[keep], minlength=(m + 1) ** 2)
    return flat.reshape(m + 1, m + 1).astype(np.int64)
