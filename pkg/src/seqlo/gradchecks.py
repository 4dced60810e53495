"""Named gradient checks, one per differentiable building block.

Each check builds a small isolated instance on toy-scale data, reduces
the output to a scalar through a fixed random projection, and compares
every parameter gradient against central finite differences under the
nncore contract. The full-window check samples a subset of entries per
parameter; everything else is checked exhaustively.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import toy
from .costvolume import AttentiveCostVolume
from .data import synth_sequence
from .geometry import Quaternion, RigidTransform, quat_normalize
from .loss import LossWeights, layer_loss, window_loss
from .model import OdometryModel
from .nncore import GradcheckReport, ParamStore, SharedMLP, gradcheck
from .pyramid import PointCloudLevel
from .refine import GruUpdate, MaskHead, PoseHead
from .sequencer import train_window
from .temporal import MotionRelay, PeepholeLstm, TemporalState
from .trainer import make_frames


def _proj(out: Tensor, rng: np.random.Generator) -> Tensor:
    return ad.tsum(out * ad.constant(rng.normal(size=out.data.shape)))


def _rng(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


def check_nncore(seed: int) -> GradcheckReport:
    """Plain MLP stack with every activation kind in play."""
    rng = _rng(seed, 1)
    store = ParamStore(seed)
    mlp = SharedMLP(store, "stack", [5, 8, 8, 4], ["relu", "tanh", "sigmoid"])
    x = ad.constant(rng.normal(size=(12, 5)))
    proj = ad.constant(rng.normal(size=(12, 4)))
    return gradcheck(lambda: ad.tsum(mlp(x) * proj), store)


def check_costvolume(seed: int) -> GradcheckReport:
    rng = _rng(seed, 2)
    store = ParamStore(seed)
    cv = AttentiveCostVolume(store, "cv", feat_width=4, embed_width=6, k=3)
    src_pts = rng.normal(size=(10, 3))
    dst_pts = src_pts + rng.normal(scale=0.3, size=(10, 3))
    src_f = ad.constant(rng.normal(size=(10, 4)))
    dst_f = ad.constant(rng.normal(size=(10, 4)))
    proj = rng.normal(size=(10, 6))
    return gradcheck(
        lambda: ad.tsum(cv(ad.constant(src_pts), src_f, dst_pts, dst_f) * ad.constant(proj)),
        store)


def check_gru(seed: int) -> GradcheckReport:
    rng = _rng(seed, 3)
    store = ParamStore(seed)
    gru = GruUpdate(store, "gru", feat_width=4, embed_width=6)
    re = ad.constant(rng.normal(size=(9, 6)))
    f = ad.constant(rng.normal(size=(9, 4)))
    ce = ad.constant(rng.normal(size=(9, 6)))
    proj = rng.normal(size=(9, 6))
    return gradcheck(lambda: ad.tsum(gru(re, f, ce) * ad.constant(proj)), store)


def check_relay(seed: int) -> GradcheckReport:
    rng = _rng(seed, 4)
    store = ParamStore(seed)
    relay = MotionRelay(store, "relay", embed_width=6, k=3)
    state = TemporalState(frame_key="prev", anchors=rng.normal(size=(8, 3)),
                          cell=ad.constant(rng.normal(size=(8, 6))),
                          embed=ad.constant(rng.normal(size=(8, 6))))
    current = rng.normal(size=(10, 3))
    q = ad.constant(quat_normalize(rng.normal(size=4)))
    t = ad.constant(rng.normal(scale=0.1, size=3))
    proj_c = rng.normal(size=(10, 6))
    proj_e = rng.normal(size=(10, 6))

    def forward():
        c, e = relay(state, current, q, t)
        return ad.tsum(c * ad.constant(proj_c)) + ad.tsum(e * ad.constant(proj_e))

    return gradcheck(forward, store)


def check_lstm(seed: int) -> GradcheckReport:
    rng = _rng(seed, 5)
    store = ParamStore(seed)
    lstm = PeepholeLstm(store, "lstm", feat_width=4, embed_width=6)
    c_prev = ad.constant(rng.normal(size=(9, 6)))
    e_prev = ad.constant(rng.normal(size=(9, 6)))
    re = ad.constant(rng.normal(size=(9, 6)))
    f = ad.constant(rng.normal(size=(9, 4)))
    proj_c = rng.normal(size=(9, 6))
    proj_e = rng.normal(size=(9, 6))

    def forward():
        c, e = lstm(c_prev, e_prev, re, f)
        return ad.tsum(c * ad.constant(proj_c)) + ad.tsum(e * ad.constant(proj_e))

    return gradcheck(forward, store)


def check_pose_head(seed: int) -> GradcheckReport:
    rng = _rng(seed, 6)
    store = ParamStore(seed)
    head = PoseHead(store, "pose", embed_width=6, hidden=(8,), drop_rate=0.0)
    # move off the zero-init plateau so q-normalization gradients are live
    head.fc.weights[-1].data[:] = rng.normal(scale=0.2, size=head.fc.weights[-1].data.shape)
    e = ad.constant(rng.normal(size=(11, 6)))
    m = ad.constant(rng.normal(size=(11, 6)))
    proj_q = rng.normal(size=4)
    proj_t = rng.normal(size=3)

    def forward():
        q, t = head(e, m)
        return ad.tsum(q * ad.constant(proj_q)) + ad.tsum(t * ad.constant(proj_t))

    return gradcheck(forward, store)


def check_loss(seed: int) -> GradcheckReport:
    """Layer loss and the three-term window loss, including s_t/s_q."""
    rng = _rng(seed, 7)
    store = ParamStore(seed)
    weights = LossWeights.create(store, (1.6, 0.8, 0.4, 0.2), 0.0, -2.5)
    qs, ts = [], []
    for pair in range(2):
        for lvl in range(4):
            qs.append(store.register(f"q{pair}{lvl}", (4,),
                                     init=quat_normalize(rng.normal(size=4)) + rng.normal(scale=0.05, size=4)))
            ts.append(store.register(f"t{pair}{lvl}", (3,), init=rng.normal(size=3)))
    gts = []
    for _ in range(3):
        gts.append(RigidTransform(Quaternion.from_array(quat_normalize(rng.normal(size=4))),
                                  rng.normal(size=3)))

    def forward():
        poses01 = [(qs[lvl], ts[lvl]) for lvl in range(4)]
        poses12 = [(qs[4 + lvl], ts[4 + lvl]) for lvl in range(4)]
        return window_loss(poses01, poses12, gts[0], gts[1], gts[2], weights)

    return gradcheck(forward, store)


def check_window(seed: int, max_entries_per_param: int = 6) -> GradcheckReport:
    """End-to-end: full train_window loss on a 32-point toy scene.

    Touches every module in one graph; checks a deterministic random
    subset of entries per parameter to stay inside the time budget."""
    cfg = toy().with_overrides(seed=seed)
    model = OdometryModel(cfg)
    seq = synth_sequence(n_frames=3, n_points=cfg.n_points, step_max=0.3,
                         rot_max_deg=4.0, noise_sigma=0.005, seed=seed)
    frames = make_frames(seq.frames)

    def forward():
        loss, _ = train_window(model, frames, seq.gt_world, training=False)
        return loss

    return gradcheck(forward, model.store,
                     max_entries_per_param=max_entries_per_param,
                     rng=_rng(seed, 8))


CHECKS = {
    "nncore": check_nncore,
    "costvolume": check_costvolume,
    "gru": check_gru,
    "relay": check_relay,
    "lstm": check_lstm,
    "pose_head": check_pose_head,
    "loss": check_loss,
    "window": check_window,
}


def run_all(seed: int = 0, module: str | None = None):
    """[(name, GradcheckReport)] for one module or all of them."""
    names = [module] if module else list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown gradcheck module(s): {unknown}; "
                         f"available: {', '.join(CHECKS)}")
    return [(name, CHECKS[name](seed)) for name in names]
