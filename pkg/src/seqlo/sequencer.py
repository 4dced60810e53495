"""Pair estimation and sequence orchestration.

estimate_pair runs the full network once between two frames; the
sequence runner threads three things from pair to pair:

* the refined finest pose, reused verbatim as the next initial guess,
* the temporal state (cell + embedding on the source frame's coarsest points),
* the pyramid cache, so each frame is encoded once, not twice.

Training windows are frame triples with a cold start: both pairs run
inside one graph, the second initialized from the first's live tensors,
so the loss reaches every parameter through both estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .costvolume import residual_embedding
from .geometry import (RigidTransform, pose_from_tensors, pose_tensors, relative_gt,
                       transform_compose, transform_compose_t, transform_distance,
                       transform_inverse)
from .loss import window_loss
from .model import OdometryModel
from .pyramid import Frame, PyramidCache, cache_get_or_build
from .refine import LevelOutput, hierarchical_refine
from .temporal import TemporalState, cold_start


@dataclass
class PairResult:
    levels: list[LevelOutput]          # per-level network outputs, 0 = finest
    transforms: list[RigidTransform]   # canonicalized per-level poses
    state: TemporalState
    t_init: RigidTransform             # the initial pose actually used

    @property
    def pose(self) -> RigidTransform:
        return self.transforms[0]

    def level_poses(self) -> list[tuple[Tensor, Tensor]]:
        return [(o.q, o.t) for o in self.levels]


def estimate_pair(model: OdometryModel, frame_a: Frame, frame_b: Frame,
                  t_init: RigidTransform | tuple[Tensor, Tensor] | None = None,
                  state: TemporalState | None = None,
                  cache: PyramidCache | None = None, *,
                  use_temporal: bool = True, training: bool = False,
                  rng: np.random.Generator | None = None) -> PairResult:
    """Estimate per-level poses mapping frame_a coordinates into frame_b.

    t_init may be a RigidTransform (inference) or a (q, t) Tensor pair
    (training, keeps the graph connected through the initialization).
    """
    if t_init is None:
        t_init = RigidTransform.identity()
    if isinstance(t_init, RigidTransform):
        q0, t0 = pose_tensors(t_init)
        init_used = t_init
    else:
        q0, t0 = t_init
        init_used = pose_from_tensors(q0, t0)

    pyr_a = cache_get_or_build(frame_a, model.encoder, cache)
    pyr_b = cache_get_or_build(frame_b, model.encoder, cache)
    model.check_pyramid(pyr_a)
    model.check_pyramid(pyr_b)

    top = model.top
    lvl_a, lvl_b = pyr_a[top], pyr_b[top]
    re3 = residual_embedding(model.cost_volumes[top], lvl_a, lvl_b, q0, t0)

    if use_temporal and state is not None:
        c_relay, e_relay = model.relay(state, lvl_a.points, q0, t0)
        cell, e3 = model.lstm(c_relay, e_relay, re3, lvl_a.features)
        new_state = TemporalState(frame_key=frame_a.key, anchors=lvl_a.points,
                                  cell=cell, embed=e3)
    else:
        e3 = re3
        new_state = cold_start(frame_a.key, lvl_a.points, re3)

    m3 = model.top_mask(e3, lvl_a.features)
    dq, dt = model.top_pose(e3, m3, training, rng)
    q_top, t_top = transform_compose_t(dq, dt, q0, t0)
    coarsest = LevelOutput(level=top, q=q_top, t=t_top, embedding=e3, mask=m3)
    outputs = hierarchical_refine(coarsest, model.layers, pyr_a, pyr_b, training, rng)
    transforms = [pose_from_tensors(o.q, o.t) for o in outputs]
    return PairResult(levels=outputs, transforms=transforms, state=new_state,
                      t_init=init_used)


@dataclass
class SequenceResult:
    world_poses: list[RigidTransform]     # per frame, first = identity
    pair_poses: list[RigidTransform]      # refined finest pose per pair
    t_inits: list[RigidTransform]         # initial pose each pair used
    pyramid_builds: int
    cache_hits: int


def run_sequence(model: OdometryModel, frames, *, seq_id="seq",
                 use_temporal: bool = True, use_seq_init: bool = True,
                 use_cache: bool = True) -> SequenceResult:
    """Odometry over a full scan list (inference only, no gradients)."""
    frames = [f if isinstance(f, Frame) else Frame((seq_id, i), np.asarray(f, dtype=np.float64))
              for i, f in enumerate(frames)]
    if len(frames) < 2:
        raise ValueError(f"need at least 2 frames, got {len(frames)}")
    cache = PyramidCache(model.cfg.cache_capacity) if use_cache else None
    builds_before = model.encoder.builds

    world = [RigidTransform.identity()]
    pair_poses: list[RigidTransform] = []
    t_inits: list[RigidTransform] = []
    state: TemporalState | None = None
    prev_pose: RigidTransform | None = None
    with ad.no_grad():
        for k in range(len(frames) - 1):
            t_init = prev_pose if (use_seq_init and prev_pose is not None) \
                else RigidTransform.identity()
            result = estimate_pair(model, frames[k], frames[k + 1], t_init,
                                   state if use_temporal else None, cache,
                                   use_temporal=use_temporal)
            pose = result.pose
            world.append(transform_compose(world[-1], transform_inverse(pose)))
            pair_poses.append(pose)
            t_inits.append(result.t_init)
            state = result.state.detached() if use_temporal else None
            prev_pose = pose
    return SequenceResult(world_poses=world, pair_poses=pair_poses, t_inits=t_inits,
                          pyramid_builds=model.encoder.builds - builds_before,
                          cache_hits=cache.hits if cache else 0)


@dataclass
class WindowDiagnostics:
    loss: float
    t_errors: tuple[float, float]        # finest-level translation error (m) per pair
    r_errors_deg: tuple[float, float]    # finest-level rotation error (deg) per pair


def train_window(model: OdometryModel, frames3: list[Frame],
                 gt_world3: list[RigidTransform], *, training: bool = True,
                 rng: np.random.Generator | None = None,
                 cache: PyramidCache | None = None) -> tuple[Tensor, WindowDiagnostics]:
    """Forward pass over one (t, t+1, t+2) window; returns the scalar
    loss tensor (graph attached) plus finest-level pose diagnostics."""
    if len(frames3) != 3 or len(gt_world3) != 3:
        raise ValueError("a training window is exactly 3 frames with 3 gt poses")
    gt01 = relative_gt(gt_world3[0], gt_world3[1])
    gt12 = relative_gt(gt_world3[1], gt_world3[2])
    gt02 = relative_gt(gt_world3[0], gt_world3[2])
    cache = cache if cache is not None else PyramidCache(2)

    first = estimate_pair(model, frames3[0], frames3[1], None, None, cache,
                          training=training, rng=rng)
    second = estimate_pair(model, frames3[1], frames3[2],
                           (first.levels[0].q, first.levels[0].t), first.state, cache,
                           training=training, rng=rng)
    loss = window_loss(first.level_poses(), second.level_poses(),
                       gt01, gt12, gt02, model.loss_weights)

    d1 = transform_distance(first.pose, gt01)
    d2 = transform_distance(second.pose, gt12)
    diag = WindowDiagnostics(loss=float(loss.data),
                             t_errors=(d1[0], d2[0]),
                             r_errors_deg=(float(np.degrees(d1[1])), float(np.degrees(d2[1]))))
    return loss, diag
