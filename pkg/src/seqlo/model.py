"""Wiring of all learnable submodules into one odometry network.

Levels are indexed 0 (finest) .. L-1 (coarsest). The coarsest level has
its own mask and pose head plus the temporal relay/LSTM; every finer
level gets a full refine layer. One ParamStore owns every weight,
including the loss scales, so a single Adam step updates everything.
"""

from __future__ import annotations

import numpy as np

from .config import Config, config_from_dict, config_to_dict
from .costvolume import AttentiveCostVolume
from .loss import LossWeights
from .nncore import Checkpoint, ParamStore, checkpoint_load, checkpoint_save
from .pyramid import Pyramid, PyramidEncoder
from .refine import MaskHead, PoseHead, RefineLayer
from .temporal import MotionRelay, PeepholeLstm


class OdometryModel:
    def __init__(self, cfg: Config, seed: int | None = None):
        self.cfg = cfg
        self.store = ParamStore(cfg.seed if seed is None else seed)
        self.encoder = PyramidEncoder(cfg, self.store)
        L = cfg.n_levels
        self.top = L - 1
        self.cost_volumes = [
            AttentiveCostVolume(self.store, f"costvol{l}", cfg.feature_widths[l],
                                cfg.embed_width, cfg.k_cv)
            for l in range(L)
        ]
        self.layers = [RefineLayer(self.store, cfg, l, self.cost_volumes[l])
                       for l in range(L - 1)]
        self.top_mask = MaskHead(self.store, f"refine{self.top}.mask",
                                 cfg.feature_widths[self.top], cfg.embed_width,
                                 with_upsampled=False)
        self.top_pose = PoseHead(self.store, f"refine{self.top}.pose", cfg.embed_width,
                                 cfg.pose_hidden, cfg.dropout)
        self.relay = MotionRelay(self.store, "temporal.relay", cfg.embed_width,
                                 cfg.k_relay, cfg.relay_dxyz)
        self.lstm = PeepholeLstm(self.store, "temporal.lstm",
                                 cfg.feature_widths[self.top], cfg.embed_width)
        self.loss_weights = LossWeights.create(self.store, cfg.alphas,
                                               cfg.s_t_init, cfg.s_q_init)

    def check_pyramid(self, pyramid: Pyramid):
        """Reject pyramids built under a different configuration."""
        if len(pyramid) != self.cfg.n_levels:
            raise ValueError(f"pyramid has {len(pyramid)} levels, model expects {self.cfg.n_levels}")
        for lvl, (n, d) in zip(pyramid, zip(self.cfg.levels, self.cfg.feature_widths)):
            if lvl.points.shape[0] != n or lvl.features.data.shape[1] != d:
                raise ValueError(
                    f"level {lvl.level}: got {lvl.points.shape[0]} points x "
                    f"{lvl.features.data.shape[1]} channels, expected {n} x {d}")

    # -- persistence ----------------------------------------------------

    def save(self, path: str, meta: dict | None = None):
        checkpoint_save(path, self.store, config_to_dict(self.cfg), meta)

    @staticmethod
    def load(path: str) -> tuple["OdometryModel", Checkpoint]:
        ckpt = checkpoint_load(path)
        model = OdometryModel(config_from_dict(ckpt.config), seed=ckpt.seed)
        model.store.load_values(ckpt.params, ckpt.adam_m, ckpt.adam_v, ckpt.adam_t)
        return model, ckpt
