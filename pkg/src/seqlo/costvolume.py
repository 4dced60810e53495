"""Attentive cost volume: per-point motion embeddings between two clouds.

Two attention stages, both over K_cv nearest neighbors with per-channel
softmax weights:

1. cross-cloud: each source point attends over its nearest destination
   points; scores see (Δxyz ⊕ f_src ⊕ f_dst), messages see (Δxyz ⊕ f_dst);
2. within-source smoothing: each source point attends over its nearest
   source neighbors' stage-1 messages.

Source coordinates may be a Tensor (warped by the current pose), so the
embedding is differentiable in the pose as well as in all features.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import pointops
from .autodiff import Tensor
from .geometry import transform_apply_t
from .nncore import ParamStore, SharedMLP
from .pyramid import PointCloudLevel


class AttentiveCostVolume:
    def __init__(self, store: ParamStore, name: str, feat_width: int,
                 embed_width: int, k: int):
        w, e = feat_width, embed_width
        self.name = name
        self.k = k
        self.feat_width = w
        self.embed_width = e
        self.score_cross = SharedMLP(store, f"{name}.score_cross", [3 + 2 * w, e], [None])
        self.message = SharedMLP(store, f"{name}.message", [3 + w, e, e], ["relu", None])
        self.score_smooth = SharedMLP(store, f"{name}.score_smooth", [3 + e, e], [None])
        self.out = SharedMLP(store, f"{name}.out", [3 + e, e, e], ["relu", None])

    def __call__(self, src_points: Tensor, src_features: Tensor,
                 dst_points: np.ndarray, dst_features: Tensor) -> Tensor:
        if src_features.data.shape[-1] != self.feat_width or \
           dst_features.data.shape[-1] != self.feat_width:
            raise ValueError(
                f"{self.name}: feature width mismatch, expected {self.feat_width}, "
                f"got src {src_features.data.shape[-1]} / dst {dst_features.data.shape[-1]}")
        src_points = ad.as_tensor(src_points)
        n, k = src_points.data.shape[0], self.k

        # stage 1: attend over destination neighbors of each source point
        idx, _ = pointops.knn(src_points.data, dst_points, k)
        dxyz = ad.constant(dst_points[idx]) - src_points.reshape((n, 1, 3))
        f_src = ad.broadcast_to(src_features.reshape((n, 1, self.feat_width)),
                                (n, k, self.feat_width))
        f_dst = ad.gather_rows(dst_features, idx)
        scores = self.score_cross(ad.concat([dxyz, f_src, f_dst], axis=2))
        weights = ad.softmax(scores, axis=1)
        messages = self.message(ad.concat([dxyz, f_dst], axis=2))
        pooled = ad.tsum(weights * messages, axis=1)                 # (n, e)

        # stage 2: smooth over source-side neighbors (same coordinates as stage 1)
        idx2, _ = pointops.knn(src_points.data, src_points.data, k)
        dxyz2 = ad.gather_rows(src_points, idx2) - src_points.reshape((n, 1, 3))
        m_nb = ad.gather_rows(pooled, idx2)
        stacked = ad.concat([dxyz2, m_nb], axis=2)
        weights2 = ad.softmax(self.score_smooth(stacked), axis=1)
        return ad.tsum(weights2 * self.out(stacked), axis=1)

    def attention_weights(self, src_points, src_features, dst_points, dst_features):
        """Both stages' softmax weights, for normalization checks."""
        src_points = ad.as_tensor(src_points)
        n, k = src_points.data.shape[0], self.k
        idx, _ = pointops.knn(src_points.data, dst_points, k)
        dxyz = ad.constant(dst_points[idx]) - src_points.reshape((n, 1, 3))
        f_src = ad.broadcast_to(src_features.reshape((n, 1, self.feat_width)),
                                (n, k, self.feat_width))
        f_dst = ad.gather_rows(dst_features, idx)
        w1 = ad.softmax(self.score_cross(ad.concat([dxyz, f_src, f_dst], axis=2)), axis=1)
        messages = self.message(ad.concat([dxyz, f_dst], axis=2))
        pooled = ad.tsum(w1 * messages, axis=1)
        idx2, _ = pointops.knn(src_points.data, src_points.data, k)
        dxyz2 = ad.gather_rows(src_points, idx2) - src_points.reshape((n, 1, 3))
        stacked = ad.concat([dxyz2, ad.gather_rows(pooled, idx2)], axis=2)
        w2 = ad.softmax(self.score_smooth(stacked), axis=1)
        return w1.data, w2.data


def residual_embedding(cv: AttentiveCostVolume, src: PointCloudLevel,
                       dst: PointCloudLevel, q: Tensor, t: Tensor) -> Tensor:
    """Cost volume after warping the source level by the current pose.

    Output rows follow the original (unwarped) source point order.
    """
    warped = transform_apply_t(q, t, ad.constant(src.points))
    return cv(warped, src.features, dst.points, dst.features)
