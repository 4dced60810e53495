"""Rigid-body geometry: unit quaternions and SE(3) transforms.

Conventions, used everywhere in the package:

* Quaternions are (w, x, y, z), unit length, canonicalized so w >= 0.
  When w == 0 exactly, the first nonzero component is made positive.
* A RigidTransform maps coordinates of the earlier frame into the later
  frame: for a static scene, applying the pair's transform to the
  earlier scan aligns it with the later scan.
* Composition order is residual-after-base: compose(delta, base)
  applies `base` first, then `delta`.
* Everything is float64.

The bottom section repeats the handful of operations the network needs
in differentiable (autodiff.Tensor) form. The differentiable product
deliberately skips renormalization: products of unit quaternions stay
unit to rounding error over the four refinement levels, and an exact
identity residual then passes the incoming pose through bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    @staticmethod
    def from_array(q) -> "Quaternion":
        w, x, y, z = np.asarray(q, dtype=np.float64)
        return Quaternion(float(w), float(x), float(y), float(z))

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion) followed by translation: p' = R(q) p + t."""

    q: Quaternion
    t: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(Quaternion.identity(), np.zeros(3))


def quat_normalize(q) -> np.ndarray:
    """Normalize to unit length and canonicalize the sign.

    Canonical means w >= 0; for w == 0 the first nonzero of (x, y, z)
    is made positive. Raises ValueError when the norm is below 1e-12.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.sqrt(np.sum(q * q))
    if n < 1e-12:
        raise ValueError(f"cannot normalize near-zero quaternion (norm={n:.3e})")
    q = q / n
    if q[0] < 0.0:
        q = -q
    elif q[0] == 0.0:
        for c in q[1:]:
            if c != 0.0:
                if c < 0.0:
                    q = -q
                break
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b (apply b's rotation first), canonicalized."""
    return quat_normalize(_hamilton(np.asarray(a, np.float64), np.asarray(b, np.float64)))


def _hamilton(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_rotation_matrix(q) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m) -> np.ndarray:
    """Unit quaternion of a rotation matrix (largest-pivot branch), canonical."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)


def transform_apply(T: RigidTransform, points) -> np.ndarray:
    """Apply p' = R(q) p + t to an (n, 3) array."""
    pts = np.asarray(points, dtype=np.float64)
    R = quat_rotation_matrix(T.q.as_array())
    return pts @ R.T + T.t


def transform_compose(delta: RigidTransform, base: RigidTransform) -> RigidTransform:
    """Transform equal to applying `base` first, then `delta`."""
    q = quat_multiply(delta.q.as_array(), base.q.as_array())
    R_delta = quat_rotation_matrix(delta.q.as_array())
    t = R_delta @ base.t + delta.t.copy()
    return RigidTransform(Quaternion.from_array(q), t)


def transform_inverse(T: RigidTransform) -> RigidTransform:
    q = T.q.as_array()
    q_inv = quat_normalize(np.array([q[0], -q[1], -q[2], -q[3]]))
    t_inv = -(quat_rotation_matrix(q_inv) @ T.t)
    return RigidTransform(Quaternion.from_array(q_inv), t_inv)


def relative_gt(T_world_a: RigidTransform, T_world_b: RigidTransform) -> RigidTransform:
    """Ground-truth pair transform from world poses of frames a and b (a earlier)."""
    return transform_compose(transform_inverse(T_world_b), T_world_a)


def transform_to_matrix(T: RigidTransform) -> np.ndarray:
    """(3, 4) matrix [R | t]."""
    out = np.empty((3, 4), dtype=np.float64)
    out[:, :3] = quat_rotation_matrix(T.q.as_array())
    out[:, 3] = T.t
    return out


def transform_from_matrix(m) -> RigidTransform:
    """Inverse of transform_to_matrix; validates the rotation block.

    Raises ValueError when R is not orthonormal with determinant +1
    (max deviation of R R^T from identity above 1e-6).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape == (4, 4):
        m = m[:3, :]
    if m.shape != (3, 4):
        raise ValueError(f"expected a 3x4 or 4x4 matrix, got shape {m.shape}")
    R = m[:, :3]
    dev = np.abs(R @ R.T - np.eye(3)).max()
    if dev > 1e-6:
        raise ValueError(f"rotation block not orthonormal (max |R R^T - I| = {dev:.3e})")
    if np.linalg.det(R) < 0.0:
        raise ValueError("rotation block has determinant -1 (reflection)")
    return RigidTransform(Quaternion.from_array(quat_from_matrix(R)), m[:, 3].copy())


def rotation_angle(R) -> float:
    """Rotation angle in radians of a 3x3 rotation matrix."""
    c = (np.trace(np.asarray(R, dtype=np.float64)[:3, :3]) - 1.0) * 0.5
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def transform_distance(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """(translation distance in m, rotation distance in rad) between two transforms."""
    d = transform_compose(transform_inverse(b), a)
    ang = rotation_angle(quat_rotation_matrix(d.q.as_array()))
    return float(np.linalg.norm(d.t)), ang


# -- differentiable variants ------------------------------------------
#
# Poses inside the network are a pair of Tensors (q: (4,), t: (3,)).


def pose_tensors(T: RigidTransform) -> tuple[Tensor, Tensor]:
    return ad.constant(T.q.as_array()), ad.constant(T.t)


def pose_from_tensors(q: Tensor, t: Tensor) -> RigidTransform:
    return RigidTransform(Quaternion.from_array(quat_normalize(q.data)), t.data.copy())


def quat_multiply_t(a: Tensor, b: Tensor) -> Tensor:
    """Hamilton product on Tensors. No renormalization (see module docstring)."""
    aw, ax, ay, az = a[0], a[1], a[2], a[3]
    bw, bx, by, bz = b[0], b[1], b[2], b[3]
    return ad.concat([
        (aw * bw - ax * bx - ay * by - az * bz).reshape(1),
        (aw * bx + ax * bw + ay * bz - az * by).reshape(1),
        (aw * by - ax * bz + ay * bw + az * bx).reshape(1),
        (aw * bz + ax * by - ay * bx + az * bw).reshape(1),
    ], axis=0)


def quat_normalize_t(q: Tensor) -> Tensor:
    n = ad.l2norm(q)
    if n.data < 1e-12:
        raise ValueError(f"cannot normalize near-zero quaternion (norm={float(n.data):.3e})")
    return q / n


def rotate_points_t(q: Tensor, points: Tensor) -> Tensor:
    """Rotate (n, 3) points by a unit quaternion, differentiably in both."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    two = 2.0
    r00 = 1.0 - two * (y * y + z * z)
    r01 = two * (x * y - w * z)
    r02 = two * (x * z + w * y)
    r10 = two * (x * y + w * z)
    r11 = 1.0 - two * (x * x + z * z)
    r12 = two * (y * z - w * x)
    r20 = two * (x * z - w * y)
    r21 = two * (y * z + w * x)
    r22 = 1.0 - two * (x * x + y * y)
    # R^T rows columnwise: points @ R.T
    px, py, pz = points[:, 0:1], points[:, 1:2], points[:, 2:3]
    ox = px * r00 + py * r01 + pz * r02
    oy = px * r10 + py * r11 + pz * r12
    oz = px * r20 + py * r21 + pz * r22
    return ad.concat([ox, oy, oz], axis=1)


def transform_apply_t(q: Tensor, t: Tensor, points: Tensor) -> Tensor:
    return rotate_points_t(q, points) + t.reshape((1, 3))


def transform_compose_t(dq: Tensor, dt: Tensor, q: Tensor, t: Tensor) -> tuple[Tensor, Tensor]:
    """Differentiable compose(delta, base); identity delta is an exact pass-through."""
    q_out = quat_multiply_t(dq, q)
    t_rot = rotate_points_t(dq, t.reshape((1, 3))).reshape(3)
    return q_out, t_rot + dt
