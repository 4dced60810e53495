"""Deterministic point-set primitives: sampling, neighbor search, grouping.

All distances are squared Euclidean, computed as sum((a - b)**2) — never
the expanded |a|^2 + |b|^2 - 2ab form, whose different rounding would
break exact agreement with the brute-force reference implementations
used in the tests. Ties always resolve to the lowest index.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _check_points(points, name="points") -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError(f"{name} contains non-finite values")
    return pts


def sqdist_to(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared distances of all rows of (n, 3) points to one point q."""
    d = points - q
    return np.sum(d * d, axis=1)


def farthest_point_sample(points, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest-point subset of size m; returns selected indices.

    The first pick is seed_index; every next pick maximizes the minimum
    squared distance to the already-chosen set, ties to the lowest
    index (argmax-first). m == n yields a permutation of all indices.
    """
    pts = _check_points(points)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"sample size m={m} out of range [1, {n}]")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index {seed_index} out of range [0, {n})")
    sel = np.empty(m, dtype=np.int64)
    sel[0] = seed_index
    mind = sqdist_to(pts, pts[seed_index])
    for i in range(1, m):
        nxt = int(np.argmax(mind))
        sel[i] = nxt
        np.minimum(mind, sqdist_to(pts, pts[nxt]), out=mind)
    return sel


def knn(query, reference, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k nearest reference points per query point.

    Returns (idx, d2): both (n_query, k), neighbors sorted by ascending
    squared distance with ties broken by lower reference index. A point
    in both sets finds itself at distance zero.
    """
    q = _check_points(query, "query")
    r = _check_points(reference, "reference")
    if not 1 <= k <= r.shape[0]:
        raise ValueError(f"k={k} out of range [1, {r.shape[0]}]")
    diff = q[:, None, :] - r[None, :, :]
    d2 = np.sum(diff * diff, axis=2)
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(d2, order, axis=1)


def group_relative(query_points, ref_points, ref_features, nn_idx) -> np.ndarray:
    """Per-neighbor input rows: (p_ref - p_query) ⊕ ref feature.

    query_points (n, 3), ref_points (m, 3), ref_features (m, d),
    nn_idx (n, k) -> (n, k, 3 + d).
    """
    q = _check_points(query_points, "query_points")
    r = _check_points(ref_points, "ref_points")
    f = np.asarray(ref_features, dtype=np.float64)
    idx = np.asarray(nn_idx)
    rel = r[idx] - q[:, None, :]
    return np.concatenate([rel, f[idx]], axis=2)


def interpolation_weights(fine_points, coarse_points, k: int = 3,
                          coincident_eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-squared-distance weights for pulling coarse features up.

    For each fine point: its min(k, n_coarse) nearest coarse points and
    normalized 1/d^2 weights. A fine point within coincident_eps of its
    nearest coarse point copies that feature (weight one). Returns
    (idx (n_fine, k'), weights (n_fine, k')).
    """
    fine = _check_points(fine_points, "fine_points")
    coarse = _check_points(coarse_points, "coarse_points")
    kk = min(k, coarse.shape[0])
    idx, d2 = knn(fine, coarse, kk)
    w = np.empty_like(d2)
    near = d2[:, 0] < coincident_eps * coincident_eps
    safe = np.maximum(d2, np.finfo(np.float64).tiny)
    inv = 1.0 / safe
    w[:] = inv / inv.sum(axis=1, keepdims=True)
    w[near] = 0.0
    w[near, 0] = 1.0
    return idx, w


def upsample_interpolate(fine_points, coarse_points, coarse_features: Tensor,
                         k: int = 3) -> Tensor:
    """Interpolate coarse per-point features onto fine points (differentiable).

    fine == coarse reproduces the features exactly (coincident copy path).
    """
    idx, w = interpolation_weights(fine_points, coarse_points, k)
    gathered = ad.gather_rows(coarse_features, idx)          # (n, k', d)
    return ad.tsum(gathered * ad.constant(w[:, :, None]), axis=1)
