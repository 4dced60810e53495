"""Point feature pyramid: chained set abstraction plus a reuse cache.

Each level halves-or-more the point count by farthest point sampling,
groups K_sa neighbors from the level below, runs a shared MLP per
neighbor row and max-pools channelwise. Construction is a pure function
of (points, parameters), so cached pyramids are interchangeable with
rebuilt ones bit for bit.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import pointops
from .autodiff import Tensor
from .config import Config
from .nncore import ParamStore, SharedMLP


@dataclass(frozen=True)
class Frame:
    """Raw input scan: a hashable identity plus its (n, 3) points."""
    key: object
    points: np.ndarray


@dataclass
class PointCloudLevel:
    level: int
    points: np.ndarray   # (n_l, 3) frame-local meters
    features: Tensor     # (n_l, D_l)


Pyramid = list  # list[PointCloudLevel], index 0 = finest


class SetAbstraction:
    """One downsampling level: FPS centers, grouped-neighbor MLP, max-pool."""

    def __init__(self, store: ParamStore, name: str, in_width: int, out_width: int,
                 k: int, fps_seed_index: int = 0):
        self.name = name
        self.k = k
        self.fps_seed_index = fps_seed_index
        self.mlp = SharedMLP(store, name, [3 + in_width, out_width, out_width],
                             ["relu", "relu"])

    def __call__(self, level_in: PointCloudLevel, n_out: int) -> PointCloudLevel:
        pts = level_in.points
        if n_out > pts.shape[0]:
            raise ValueError(f"{self.name}: n_out={n_out} exceeds input size {pts.shape[0]}")
        centers_idx = pointops.farthest_point_sample(pts, n_out, self.fps_seed_index)
        centers = pts[centers_idx]
        nn_idx, _ = pointops.knn(centers, pts, self.k)
        rel = pts[nn_idx] - centers[:, None, :]                      # (n_out, k, 3)
        grouped = ad.concat([ad.constant(rel),
                             ad.gather_rows(level_in.features, nn_idx)], axis=2)
        per_neighbor = self.mlp(grouped)                             # (n_out, k, D_out)
        feats = ad.tmax(per_neighbor, axis=1)
        return PointCloudLevel(level=level_in.level + 1, points=centers, features=feats)


class PyramidEncoder:
    """Builds the full pyramid; counts builds and set-abstraction calls."""

    def __init__(self, cfg: Config, store: ParamStore):
        self.cfg = cfg
        self.sa_levels: list[SetAbstraction] = []
        in_width = 3  # level-0 input features are the raw coordinates
        for l, (n, d) in enumerate(zip(cfg.levels, cfg.feature_widths)):
            self.sa_levels.append(SetAbstraction(
                store, f"pyramid.sa{l}", in_width, d, cfg.k_sa, cfg.fps_seed_index))
            in_width = d
        self.builds = 0
        self.sa_invocations = 0

    def build(self, points: np.ndarray) -> Pyramid:
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected (n, 3) points, got {pts.shape}")
        if pts.shape[0] < self.cfg.levels[0]:
            raise ValueError(f"{pts.shape[0]} points < finest level size {self.cfg.levels[0]}")
        self.builds += 1
        current = PointCloudLevel(level=-1, points=pts, features=ad.constant(pts))
        levels = []
        for sa, n_out in zip(self.sa_levels, self.cfg.levels):
            current = sa(current, n_out)
            self.sa_invocations += 1
            levels.append(current)
        return levels


class PyramidCache:
    """LRU map frame key -> pyramid, capacity C (0 disables caching)."""

    def __init__(self, capacity: int = 2):
        self.capacity = int(capacity)
        self._entries: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._entries)

    def __contains__(self, key):
        return key in self._entries

    def get(self, key):
        if key in self._entries:
            self._entries.move_to_end(key)
            self.hits += 1
            return self._entries[key]
        self.misses += 1
        return None

    def put(self, key, pyramid):
        if self.capacity <= 0:
            return
        self._entries[key] = pyramid
        self._entries.move_to_end(key)
        while len(self._entries) > self.capacity:
            self._entries.popitem(last=False)


def cache_get_or_build(frame: Frame, encoder: PyramidEncoder,
                       cache: PyramidCache | None) -> Pyramid:
    """Cached pyramid lookup; a hit returns the stored object untouched."""
    if cache is None:
        return encoder.build(frame.points)
    hit = cache.get(frame.key)
    if hit is not None:
        return hit
    pyramid = encoder.build(frame.points)
    cache.put(frame.key, pyramid)
    return pyramid
