"""Gated hierarchical pose refinement.

Per level, coarse to fine: upsample the coarser level's embedding and
mask onto this level's points, warp by the incoming pose, build the
residual embedding, run the gated update, re-predict the mask, and
regress a residual pose that pre-composes onto the incoming one.

The gated update is a convex mix E = (1-z) ⊙ CE + z ⊙ Ẽ with

    z = σ(MLP_z(CE ⊕ x)),  r = σ(MLP_r(CE ⊕ x)),
    Ẽ = tanh(MLP_E((r ⊙ CE) ⊕ x)),  x = RE ⊕ F,

so forcing z to an endpoint hands the output to CE or Ẽ entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import pointops
from .autodiff import Tensor
from .config import Config
from .costvolume import AttentiveCostVolume, residual_embedding
from .geometry import quat_normalize_t, transform_compose_t
from .nncore import ParamStore, SharedMLP, dropout
from .pyramid import Pyramid


class GruUpdate:
    """Single-application gated embedding update (one pass per level)."""

    def __init__(self, store: ParamStore, name: str, feat_width: int, embed_width: int):
        gate_in = embed_width + embed_width + feat_width  # CE ⊕ RE ⊕ F
        self.mlp_z = SharedMLP(store, f"{name}.z", [gate_in, embed_width], [None])
        self.mlp_r = SharedMLP(store, f"{name}.r", [gate_in, embed_width], [None])
        self.mlp_e = SharedMLP(store, f"{name}.e", [gate_in, embed_width], [None])

    def __call__(self, re: Tensor, f: Tensor, ce: Tensor) -> Tensor:
        x = ad.concat([re, f], axis=1)
        cx = ad.concat([ce, x], axis=1)
        z = ad.sigmoid(self.mlp_z(cx))
        r = ad.sigmoid(self.mlp_r(cx))
        e_cand = ad.tanh(self.mlp_e(ad.concat([r * ce, x], axis=1)))
        return (1.0 - z) * ce + z * e_cand


class MaskHead:
    """Embedding-mask logits; the coarsest level has no upsampled-mask input."""

    def __init__(self, store: ParamStore, name: str, feat_width: int,
                 embed_width: int, with_upsampled: bool):
        in_width = embed_width + feat_width + (embed_width if with_upsampled else 0)
        self.with_upsampled = with_upsampled
        self.mlp = SharedMLP(store, name, [in_width, embed_width, embed_width],
                             ["relu", None])

    def __call__(self, e: Tensor, f: Tensor, cm: Tensor | None = None) -> Tensor:
        parts = [e, f]
        if self.with_upsampled:
            if cm is None:
                raise ValueError("mask head below the top level needs the upsampled mask")
            parts.append(cm)
        return self.mlp(ad.concat(parts, axis=1))


class PoseHead:
    """Mask-weighted pooling over points, then an FC stack to (q | t).

    The final layer is zero-initialized with bias (1,0,0,0, 0,0,0): an
    untrained head emits the exact identity residual.
    """

    def __init__(self, store: ParamStore, name: str, embed_width: int,
                 hidden: tuple[int, ...], drop_rate: float):
        widths = [embed_width, *hidden, 7]
        acts = ["relu"] * len(hidden) + [None]
        self.fc = SharedMLP(store, name, widths, acts)
        self.drop_rate = drop_rate
        self.fc.weights[-1].data[:] = 0.0
        self.fc.biases[-1].data[:] = np.array([1.0, 0, 0, 0, 0, 0, 0])

    def __call__(self, e: Tensor, m: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        weights = ad.softmax(m, axis=0)                  # over points, per channel
        pooled = ad.tsum(weights * e, axis=0)            # (D_e,)
        raw = self.fc(dropout(pooled, self.drop_rate, training, rng))
        dq = quat_normalize_t(raw[0:4])
        return dq, raw[4:7]

    def pooling_weights(self, m: Tensor) -> np.ndarray:
        return ad.softmax(m, axis=0).data


@dataclass
class LevelOutput:
    level: int
    q: Tensor            # (4,) unit (to rounding), NOT sign-canonicalized
    t: Tensor            # (3,)
    embedding: Tensor    # (n_l, D_e)
    mask: Tensor         # (n_l, D_e) logits


class RefineLayer:
    """One coarse-to-fine step at a fixed level below the coarsest."""

    def __init__(self, store: ParamStore, cfg: Config, level: int,
                 cost_volume: AttentiveCostVolume):
        d = cfg.feature_widths[level]
        e = cfg.embed_width
        self.level = level
        self.k_up = cfg.k_up
        self.cost_volume = cost_volume
        self.gru = GruUpdate(store, f"refine{level}.gru", d, e)
        self.mask = MaskHead(store, f"refine{level}.mask", d, e, with_upsampled=True)
        self.pose = PoseHead(store, f"refine{level}.pose", e, cfg.pose_hidden, cfg.dropout)

    def __call__(self, upper: LevelOutput, pyramid_a: Pyramid, pyramid_b: Pyramid,
                 training: bool = False, rng: np.random.Generator | None = None) -> LevelOutput:
        lvl_a = pyramid_a[self.level]
        lvl_b = pyramid_b[self.level]
        coarse_pts = pyramid_a[self.level + 1].points
        ce = pointops.upsample_interpolate(lvl_a.points, coarse_pts, upper.embedding, self.k_up)
        cm = pointops.upsample_interpolate(lvl_a.points, coarse_pts, upper.mask, self.k_up)
        re = residual_embedding(self.cost_volume, lvl_a, lvl_b, upper.q, upper.t)
        e = self.gru(re, lvl_a.features, ce)
        m = self.mask(e, lvl_a.features, cm)
        dq, dt = self.pose(e, m, training, rng)
        q, t = transform_compose_t(dq, dt, upper.q, upper.t)
        return LevelOutput(level=self.level, q=q, t=t, embedding=e, mask=m)


def hierarchical_refine(coarsest: LevelOutput, layers: list[RefineLayer],
                        pyramid_a: Pyramid, pyramid_b: Pyramid,
                        training: bool = False,
                        rng: np.random.Generator | None = None) -> list[LevelOutput]:
    """Run every refine layer below the coarsest; returns outputs by level
    (index 0 = finest). A single-level config returns just the coarsest."""
    outputs = [coarsest]
    current = coarsest
    for layer in reversed(layers):        # layers[i] refines level i
        current = layer(current, pyramid_a, pyramid_b, training, rng)
        outputs.append(current)
    outputs.reverse()
    return outputs
