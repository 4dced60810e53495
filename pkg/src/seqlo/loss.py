"""Pose regression loss with learnable translation/rotation balancing.

Per level, with gt pair pose (q_gt, t_gt) and raw predicted (q, t):

    ℓ = ‖t_gt − t‖₁ · e^(−s_t) + s_t + ‖q_gt − q/‖q‖‖₂ · e^(−s_q) + s_q

s_t and s_q are trainable scalars (initialized 0 and −2.5). The window
loss sums the level losses of the two adjacent pairs plus the skip pair
(t, t+2), whose per-level pose is the composition of the corresponding
level poses, every term weighted by its level's alpha (alphas[0] being
the finest level's weight).

Both quaternions are brought to the w >= 0 hemisphere before the norm,
so q and −q never register as a large rotation error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import RigidTransform, quat_normalize_t, transform_compose_t
from .nncore import ParamStore


@dataclass
class LossWeights:
    alphas: tuple[float, ...]
    s_t: Tensor
    s_q: Tensor

    @staticmethod
    def create(store: ParamStore, alphas, s_t_init: float, s_q_init: float) -> "LossWeights":
        s_t = store.register("loss.s_t", (), init=np.float64(s_t_init))
        s_q = store.register("loss.s_q", (), init=np.float64(s_q_init))
        return LossWeights(alphas=tuple(float(a) for a in alphas), s_t=s_t, s_q=s_q)


def _canonical_t(q: Tensor) -> Tensor:
    """Unit-normalize and flip into the w >= 0 hemisphere (flip sign is
    locally constant, so gradients pass through untouched)."""
    qn = quat_normalize_t(q)
    return -qn if qn.data[0] < 0.0 else qn


def layer_loss(q: Tensor, t: Tensor, gt: RigidTransform, s_t: Tensor, s_q: Tensor) -> Tensor:
    qn = _canonical_t(q)
    gt_q = ad.constant(gt.q.as_array())
    gt_t = ad.constant(gt.t)
    err_t = ad.tsum(ad.absval(t - gt_t))
    err_q = ad.l2norm(qn - gt_q)
    return err_t * ad.exp(-s_t) + s_t + err_q * ad.exp(-s_q) + s_q


def pair_loss(level_poses: list[tuple[Tensor, Tensor]], gt: RigidTransform,
              weights: LossWeights) -> Tensor:
    """Alpha-weighted sum of per-level losses for one frame pair.

    level_poses[l] = (q, t) at pyramid level l (0 = finest)."""
    if len(level_poses) != len(weights.alphas):
        raise ValueError(f"{len(level_poses)} level poses vs {len(weights.alphas)} alphas")
    total = None
    for alpha, (q, t) in zip(weights.alphas, level_poses):
        term = alpha * layer_loss(q, t, gt, weights.s_t, weights.s_q)
        total = term if total is None else total + term
    return total


def window_loss(poses_01: list[tuple[Tensor, Tensor]],
                poses_12: list[tuple[Tensor, Tensor]],
                gt_01: RigidTransform, gt_12: RigidTransform, gt_02: RigidTransform,
                weights: LossWeights) -> Tensor:
    """Three-term loss over a frame triple (t, t+1, t+2).

    The skip-pair prediction at level l composes that level's two pair
    poses; gradients therefore reach both pairs through all terms.
    """
    poses_02 = [transform_compose_t(q12, t12, q01, t01)
                for (q01, t01), (q12, t12) in zip(poses_01, poses_12)]
    return (pair_loss(poses_01, gt_01, weights)
            + pair_loss(poses_12, gt_12, weights)
            + pair_loss(poses_02, gt_02, weights))
