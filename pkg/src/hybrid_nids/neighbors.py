"""Exact brute-force Euclidean k-nearest-neighbor search.

Distances are screened with the ``|q|^2 + |r|^2 - 2 q.r`` expansion in
blocks, then every candidate within rounding slack of the k-th distance is
re-measured exactly so that ties resolve to the lowest reference index.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError

_BLOCK_CELLS = 4_000_000


def k_nearest(
    queries: np.ndarray,
    ref: np.ndarray,
    k: int,
    self_index: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Indices and squared distances of the ``k`` nearest rows of ``ref``.

    ``self_index[i]`` (if given) is a reference row excluded for query ``i``.
    Rows are ordered by (distance, index).
    """
    queries = np.asarray(queries, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    available = len(ref) - (0 if self_index is None else 1)
    if k < 1 or k > available:
        raise ArgumentError(f"k={k} must be in [1, {available}]")
    nq = len(queries)
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_d2 = np.empty((nq, k), dtype=np.float64)
    rn = np.einsum("ij,ij->i", ref, ref)
    qn = np.einsum("ij,ij->i", queries, queries)
    rmax = rn.max() if len(rn) else 0.0
    block = max(1, _BLOCK_CELLS // max(1, len(ref)))
    eps = np.finfo(np.float64).eps
    for start in range(0, nq, block):
        stop = min(nq, start + block)
        d2 = qn[start:stop, None] + rn[None, :] - 2.0 * (queries[start:stop] @ ref.T)
        np.maximum(d2, 0.0, out=d2)
        if self_index is not None:
            d2[np.arange(stop - start), self_index[start:stop]] = np.inf
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        slack = 64 * eps * (qn[start:stop] + rmax) + 1e-300
        for r in range(stop - start):
            cand = np.flatnonzero(d2[r] <= kth[r] + slack[r])
            q = queries[start + r]
            diff = ref[cand] - q
            exact = np.einsum("ij,ij->i", diff, diff)
            order = np.lexsort((cand, exact))[:k]
            out_idx[start + r] = cand[order]
            out_d2[start + r] = exact[order]
    return out_idx, out_d2
