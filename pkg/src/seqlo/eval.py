"""Odometry accuracy metrics over world-pose trajectories.

* subsequence translation/rotation errors (the 100..800 m protocol),
* absolute trajectory error after rigid (no-scale) alignment,
* relative pose error at a fixed frame delta.

All inputs are per-frame world poses (RigidTransform lists).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, quat_rotation_matrix

SEGMENT_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


def _as_mats(poses: list[RigidTransform]) -> np.ndarray:
    out = np.tile(np.eye(4), (len(poses), 1, 1))
    for i, T in enumerate(poses):
        out[i, :3, :3] = quat_rotation_matrix(T.q.as_array())
        out[i, :3, 3] = T.t
    return out


def _check_pair(gt, est):
    if len(gt) != len(est):
        raise ValueError(f"trajectory lengths differ: gt {len(gt)} vs est {len(est)}")
    if len(gt) < 2:
        raise ValueError("need at least 2 poses")


def _rotation_angle_deg(R: np.ndarray) -> float:
    c = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def _path_lengths(mats: np.ndarray) -> np.ndarray:
    steps = np.linalg.norm(np.diff(mats[:, :3, 3], axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


@dataclass
class SubsequenceErrors:
    rte_percent: float | None      # translation RMSE, % of segment length
    rre_deg_per_100m: float | None
    n_samples: int


def kitti_rte_rre(gt: list[RigidTransform], est: list[RigidTransform]) -> SubsequenceErrors:
    """Errors over all (start, length) subsequences with length in
    SEGMENT_LENGTHS; a ground-truth path under 100 m yields the explicit
    empty result (n_samples = 0), never silent zeros."""
    _check_pair(gt, est)
    g = _as_mats(gt)
    e = _as_mats(est)
    dist = _path_lengths(g)
    t_errs, r_errs = [], []
    for i in range(len(gt)):
        for d in SEGMENT_LENGTHS:
            # first j with cumulative path(i -> j) >= d
            j = int(np.searchsorted(dist, dist[i] + d, side="left"))
            if j >= len(gt):
                break
            gt_rel = np.linalg.inv(g[i]) @ g[j]
            est_rel = np.linalg.inv(e[i]) @ e[j]
            err = np.linalg.inv(gt_rel) @ est_rel
            t_errs.append(np.linalg.norm(err[:3, 3]) / d * 100.0)
            r_errs.append(_rotation_angle_deg(err[:3, :3]) / d * 100.0)
    if not t_errs:
        return SubsequenceErrors(None, None, 0)
    return SubsequenceErrors(
        rte_percent=float(np.sqrt(np.mean(np.square(t_errs)))),
        rre_deg_per_100m=float(np.sqrt(np.mean(np.square(r_errs)))),
        n_samples=len(t_errs))


def umeyama_alignment(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid (R, t) aligning src points onto dst (no scale)."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cov = (dst - mu_d).T @ (src - mu_s) / src.shape[0]
    U, _, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return R, mu_d - R @ mu_s


def ate(gt: list[RigidTransform], est: list[RigidTransform]) -> float:
    """Position RMSE after rigid alignment of est onto gt."""
    _check_pair(gt, est)
    p_gt = _as_mats(gt)[:, :3, 3]
    p_est = _as_mats(est)[:, :3, 3]
    R, t = umeyama_alignment(p_est, p_gt)
    resid = p_est @ R.T + t - p_gt
    return float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))


def rpe(gt: list[RigidTransform], est: list[RigidTransform],
        delta: int = 1) -> tuple[float, float]:
    """(translation m RMSE, rotation deg RMSE) of relative poses at
    frame distance delta."""
    _check_pair(gt, est)
    if not 1 <= delta < len(gt):
        raise ValueError(f"delta {delta} out of range for {len(gt)} poses")
    g = _as_mats(gt)
    e = _as_mats(est)
    t_errs, r_errs = [], []
    for i in range(len(gt) - delta):
        gt_rel = np.linalg.inv(g[i]) @ g[i + delta]
        est_rel = np.linalg.inv(e[i]) @ e[i + delta]
        err = np.linalg.inv(gt_rel) @ est_rel
        t_errs.append(np.linalg.norm(err[:3, 3]))
        r_errs.append(_rotation_angle_deg(err[:3, :3]))
    return (float(np.sqrt(np.mean(np.square(t_errs)))),
            float(np.sqrt(np.mean(np.square(r_errs)))))
