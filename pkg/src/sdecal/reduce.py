"""Order-fixed reductions over the realization axis.

Sums over realizations are split into 1024-row chunks whose boundaries
depend only on the length of the axis. Each chunk is summed by numpy
(pairwise, single threaded) and the chunk partials are then added left to
right, so the result never depends on how the rows were produced.
"""

from __future__ import annotations

import numpy as np

CHUNK = 1024


def det_sum(a, axis: int = 0) -> np.ndarray:
    a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, 0)
    n = a.shape[0]
    if n <= CHUNK:
        return a.sum(axis=0)
    total = a[:CHUNK].sum(axis=0)
    for start in range(CHUNK, n, CHUNK):
        total = total + a[start:start + CHUNK].sum(axis=0)
    return total


def det_mean(a, axis: int = 0) -> np.ndarray:
    a = np.asarray(a)
    return det_sum(a, axis) / a.shape[axis]
