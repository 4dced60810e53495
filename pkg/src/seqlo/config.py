"""Model/training configuration, loaded from TOML.

One flat dataclass covers the pyramid widths, neighbor counts, loss
weights, and optimizer schedule. `desk()` is the small profile used by
the test suite and the synthetic overfit run; `full()` mirrors the
road-scale setup (N=8192) and exists for completeness, not for CI.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, asdict, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class Config:
    # pyramid
    levels: tuple[int, ...] = (128, 64, 32, 16)      # points per level, fine -> coarse
    feature_widths: tuple[int, ...] = (8, 16, 32, 64)
    embed_width: int = 64                            # motion-embedding channels (all levels)
    k_sa: int = 16                                   # set-abstraction neighbors
    k_cv: int = 8                                    # cost-volume neighbors (both stages)
    k_relay: int = 8                                 # temporal relay neighbors
    k_up: int = 3                                    # upsampling interpolation neighbors
    fps_seed_index: int = 0
    # refinement
    pose_hidden: tuple[int, ...] = (64,)
    dropout: float = 0.0
    relay_dxyz: bool = True                          # False = strict state-only relay input
    # loss (alphas[0] weights the finest level)
    alphas: tuple[float, ...] = (1.6, 0.8, 0.4, 0.2)
    s_t_init: float = 0.0
    s_q_init: float = -2.5
    # optimizer
    lr: float = 1e-3
    lr_decay: float = 0.7
    lr_decay_epochs: int = 26
    lr_floor: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # training
    n_points: int = 256
    batch: int = 1
    max_steps: int = 2000
    seed: int = 0
    cache_capacity: int = 2
    data_dir: str = ""
    # optional early stop on training pose error (0 disables)
    target_t_err: float = 0.0
    target_r_err_deg: float = 0.0

    def __post_init__(self):
        if len(self.levels) != len(self.feature_widths):
            raise ValueError("levels and feature_widths must have equal length")
        if len(self.alphas) != len(self.levels):
            raise ValueError("alphas must have one weight per pyramid level")
        for fine, coarse in zip(self.levels[:-1], self.levels[1:]):
            if coarse >= fine:
                raise ValueError(f"levels must strictly decrease, got {self.levels}")
        if self.levels and self.n_points < self.levels[0]:
            raise ValueError(f"n_points={self.n_points} below finest level size {self.levels[0]}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "Config":
        return replace(self, **kw)


_SECTIONS = {
    "model": ["levels", "feature_widths", "embed_width", "k_sa", "k_cv", "k_relay",
              "k_up", "fps_seed_index", "pose_hidden", "dropout", "relay_dxyz"],
    "loss": ["alphas", "s_t_init", "s_q_init"],
    "optim": ["lr", "lr_decay", "lr_decay_epochs", "lr_floor", "beta1", "beta2", "adam_eps"],
    "train": ["n_points", "batch", "max_steps", "seed", "cache_capacity", "data_dir",
              "target_t_err", "target_r_err_deg"],
}

_TUPLE_FIELDS = {"levels", "feature_widths", "pose_hidden", "alphas"}


def config_from_dict(raw: dict) -> Config:
    kw = {}
    for section, keys in _SECTIONS.items():
        body = raw.get(section, {})
        if not isinstance(body, dict):
            raise ValueError(f"config section [{section}] must be a table")
        for k, v in body.items():
            if k not in keys:
                raise ValueError(f"unknown config key [{section}] {k}")
            kw[k] = tuple(v) if k in _TUPLE_FIELDS else v
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return Config(**kw)


def config_to_dict(cfg: Config) -> dict:
    """Inverse of config_from_dict (sectioned layout, JSON-friendly)."""
    d = cfg.to_dict()
    return {section: {k: (list(d[k]) if k in _TUPLE_FIELDS else d[k]) for k in keys}
            for section, keys in _SECTIONS.items()}


def load_config(path: str) -> Config:
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    return config_from_dict(raw)


def desk() -> Config:
    # Full-size per-level feature widths even at 256 points: narrow desk
    # features underfit translation on the synthetic benchmark. Faster lr
    # decay than the road-scale schedule: a 2000-step desk run must
    # actually reach the lr floor, or the L1 pose loss keeps the
    # parameters oscillating at an error floor proportional to lr.
    return Config(feature_widths=(32, 64, 128, 256), lr_decay_epochs=10)


def full() -> Config:
    return Config(
        levels=(2048, 512, 256, 64),
        feature_widths=(32, 64, 128, 256),
        embed_width=256,
        dropout=0.5,
        n_points=8192,
        batch=8,
    )


def toy() -> Config:
    """32-point profile for gradient checks and fast unit tests."""
    return Config(
        levels=(16, 8, 4, 2),
        feature_widths=(4, 4, 6, 8),
        embed_width=8,
        k_sa=4,
        k_cv=2,
        k_relay=2,
        pose_hidden=(8,),
        n_points=32,
    )
