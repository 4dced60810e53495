"""KITTI-format ingestion, synthetic sequences, and input-size sampling.

On-disk layout (synthetic sequences use the same formats, reflectance 0):

* scans:  <dir>/velodyne/NNNNNN.bin — float32 LE (x, y, z, reflectance) quadruples
* poses:  12 ASCII floats per line, row-major 3x4 [R|t] world pose per frame
* calib:  text file with a line "Tr: <12 floats>" (LiDAR -> camera)

Pose text round-trips exactly: floats are written with repr-faithful
precision.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .geometry import (Quaternion, RigidTransform, quat_normalize, transform_apply,
                       transform_compose, transform_from_matrix, transform_inverse,
                       transform_to_matrix)
from .nncore import atomic_write_bytes


class DataError(ValueError):
    """Malformed input files or directories."""


def read_kitti_scan(path: str) -> np.ndarray:
    """(n, 3) float64 coordinates; the reflectance channel is dropped."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % 16 != 0:
        raise DataError(f"{path}: byte length {raw.size} not divisible by 16")
    pts = raw.view("<f4").reshape(-1, 4)
    return pts[:, :3].astype(np.float64)


def write_kitti_scan(path: str, points: np.ndarray, reflectance: float = 0.0):
    pts = np.asarray(points, dtype=np.float64)
    rows = np.empty((pts.shape[0], 4), dtype="<f4")
    rows[:, :3] = pts
    rows[:, 3] = reflectance
    atomic_write_bytes(path, rows.tobytes())


def _format_pose_line(T: RigidTransform) -> str:
    return " ".join(f"{v:.17g}" for v in transform_to_matrix(T).reshape(-1))


def write_kitti_poses(path: str, poses: list[RigidTransform]):
    atomic_write_bytes(path, ("\n".join(_format_pose_line(T) for T in poses) + "\n").encode())


def read_kitti_poses(path: str, calib_tr: RigidTransform | None = None) -> list[RigidTransform]:
    """World poses, one per line; with a calibration Tr the camera-frame
    poses are conjugated into the LiDAR frame: T_lidar = Tr⁻¹ ∘ T_cam ∘ Tr."""
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            vals = line.split()
            if len(vals) != 12:
                raise DataError(f"{path}:{lineno}: expected 12 floats, got {len(vals)}")
            try:
                mat = np.array([float(v) for v in vals]).reshape(3, 4)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            try:
                T = transform_from_matrix(mat)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if calib_tr is not None:
                T = transform_compose(transform_compose(transform_inverse(calib_tr), T),
                                      calib_tr)
            poses.append(T)
    if not poses:
        raise DataError(f"{path}: no pose lines")
    return poses


def read_calib_tr(path: str) -> RigidTransform:
    with open(path) as f:
        for line in f:
            m = re.match(r"^Tr:?\s+(.*)$", line.strip())
            if m:
                vals = m.group(1).split()
                if len(vals) != 12:
                    raise DataError(f"{path}: Tr line has {len(vals)} floats, expected 12")
                return transform_from_matrix(np.array([float(v) for v in vals]).reshape(3, 4))
    raise DataError(f"{path}: no 'Tr:' line found")


def sample_to_n(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly n points: a random subset when oversized, the full set
    padded by resampling with replacement when undersized."""
    pts = np.asarray(points, dtype=np.float64)
    count = pts.shape[0]
    if count == 0:
        raise DataError("cannot sample from an empty scan")
    if count >= n:
        return pts[rng.choice(count, size=n, replace=False)]
    pad = pts[rng.integers(0, count, size=n - count)]
    return np.concatenate([pts, pad], axis=0)


# -- synthetic sequences -----------------------------------------------


@dataclass
class SyntheticSequence:
    frames: list[np.ndarray]           # per-frame (n, 3) local coordinates
    gt_world: list[RigidTransform]     # LiDAR-to-world pose per frame


def synth_sequence(n_frames: int, n_points: int, step_max: float, rot_max_deg: float,
                   noise_sigma: float, seed: int,
                   box=(40.0, 40.0, 5.0)) -> SyntheticSequence:
    """Static random scene observed from a smooth ego trajectory.

    Per-frame motion: forward-biased translation of magnitude ≤ step_max
    and a yaw ≤ rot_max_deg with roll/pitch a tenth of that. Frame k's
    points are the scene in frame-k coordinates plus N(0, σ²) noise.
    """
    if n_frames < 2:
        raise DataError(f"need at least 2 frames, got {n_frames}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    half = np.asarray(box, dtype=np.float64) / 2.0
    scene = rng.uniform(-half, half, size=(n_points, 3))

    world = [RigidTransform.identity()]
    rot_max = np.deg2rad(rot_max_deg)
    for _ in range(n_frames - 1):
        yaw = rng.uniform(-rot_max, rot_max)
        roll = rng.uniform(-rot_max, rot_max) * 0.1
        pitch = rng.uniform(-rot_max, rot_max) * 0.1
        q = quat_normalize(_euler_quat(roll, pitch, yaw))
        mag = step_max * rng.uniform(0.3, 1.0)
        direction = np.array([1.0, rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.1)])
        t = mag * direction / np.linalg.norm(direction)
        step = RigidTransform(Quaternion.from_array(q), t)  # frame k -> frame k-1
        world.append(transform_compose(world[-1], step))

    frames = []
    for T in world:
        local = transform_apply(transform_inverse(T), scene)
        if noise_sigma > 0:
            local = local + rng.normal(0.0, noise_sigma, size=local.shape)
        frames.append(local)
    return SyntheticSequence(frames=frames, gt_world=world)


def _euler_quat(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Quaternion of intrinsic z-y-x rotation (yaw, pitch, roll)."""
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])


def write_sequence_dir(out_dir: str, seq: SyntheticSequence):
    """Lay a sequence out as <dir>/velodyne/NNNNNN.bin + <dir>/poses.txt."""
    scans = os.path.join(out_dir, "velodyne")
    os.makedirs(scans, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        write_kitti_scan(os.path.join(scans, f"{i:06d}.bin"), frame)
    write_kitti_poses(os.path.join(out_dir, "poses.txt"), seq.gt_world)


def read_sequence_dir(data_dir: str, require_poses: bool = False):
    """(scans sorted by filename, poses or None) from write_sequence_dir layout."""
    scans_dir = os.path.join(data_dir, "velodyne")
    if not os.path.isdir(scans_dir):
        raise DataError(f"{data_dir}: no velodyne/ subdirectory")
    names = sorted(fn for fn in os.listdir(scans_dir) if fn.endswith(".bin"))
    if not names:
        raise DataError(f"{scans_dir}: no .bin scans")
    frames = [read_kitti_scan(os.path.join(scans_dir, fn)) for fn in names]
    poses_path = os.path.join(data_dir, "poses.txt")
    poses = None
    if os.path.exists(poses_path):
        poses = read_kitti_poses(poses_path)
        if len(poses) != len(frames):
            raise DataError(f"{data_dir}: {len(frames)} scans but {len(poses)} poses")
    elif require_poses:
        raise DataError(f"{data_dir}: poses.txt required but missing")
    return frames, poses
