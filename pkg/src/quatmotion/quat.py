"""Quaternion algebra on numpy arrays.

Quaternions are stored as (..., 4) float64 arrays in (w, x, y, z) order,
Hamilton (right-handed) multiplication convention. All functions broadcast
over leading dimensions and never renormalize implicitly.
"""

from __future__ import annotations

import numpy as np

AXES = {"x": 0, "y": 1, "z": 2}
EULER_ORDERS = ("xyz", "xzy", "yxz", "yzx", "zxy", "zyx")

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


class DegenerateQuaternion(ValueError):
    """Raised when a quaternion with (near-)zero norm cannot be normalized."""


def qmul(a, b):
    """Hamilton product a ⊗ b. Inputs need not be unit; no renormalization."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def qconj(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def qnorm(q):
    return np.linalg.norm(np.asarray(q, dtype=np.float64), axis=-1)


def qnormalize(q, eps=1e-12):
    """Scale q to unit norm. Raises DegenerateQuaternion if norm <= eps."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n <= eps):
        raise DegenerateQuaternion(f"quaternion norm {float(n.min()):.3e} <= {eps:.0e}")
    return q / n


def qrotate(q, v):
    """Rotate 3-vector(s) v by unit quaternion(s) q, as q ⊗ (0,v) ⊗ q*.

    Pure quaternion arithmetic; no rotation matrix is formed.
    """
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    pv = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)
    return qmul(qmul(q, pv), qconj(q))[..., 1:]


def expmap_to_quat(e):
    """Axis-angle 3-vector to quaternion: q = (cos θ/2, sin(θ/2)·axis), θ = ‖e‖.

    For θ below 1e-8 the sin(θ/2)/θ factor uses its 2nd-order Taylor form,
    keeping the map smooth through the origin.
    """
    e = np.asarray(e, dtype=np.float64)
    theta = np.linalg.norm(e, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < 1e-8
    # sin(θ/2)/θ = 1/2 - θ²/48 + O(θ⁴)
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / np.where(small, 1.0, theta))
    w = np.cos(half)
    return np.concatenate([w, factor * e], axis=-1)


def axis_angle_quat(axis, angle):
    """Unit quaternion for a rotation of `angle` radians about `axis`."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(angle / 2.0), np.sin(angle / 2.0) * axis], axis=-1)


def _single_axis_quat(axis_index, angle):
    angle = np.asarray(angle, dtype=np.float64)
    q = np.zeros(angle.shape + (4,))
    q[..., 0] = np.cos(angle / 2.0)
    q[..., 1 + axis_index] = np.sin(angle / 2.0)
    return q


def euler_to_quat(angles, order="zyx"):
    """Intrinsic Euler triple (a1, a2, a3) applied in `order` to a quaternion."""
    order = _check_order(order)
    angles = np.asarray(angles, dtype=np.float64)
    q = _single_axis_quat(AXES[order[0]], angles[..., 0])
    q = qmul(q, _single_axis_quat(AXES[order[1]], angles[..., 1]))
    q = qmul(q, _single_axis_quat(AXES[order[2]], angles[..., 2]))
    return q


def _check_order(order):
    order = order.lower()
    if order not in EULER_ORDERS:
        raise ValueError(f"unknown euler order {order!r}, expected one of {EULER_ORDERS}")
    return order


def _rotmat_entries(q):
    """The nine entries of R(q) as a (..., 3, 3) array (unit q assumed)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


# Permutation parity of the order's axis triple: +1 for even permutations of xyz.
_PARITY = {"xyz": 1.0, "yzx": 1.0, "zxy": 1.0, "xzy": -1.0, "zyx": -1.0, "yxz": -1.0}

GIMBAL_EPS = 1e-7


def quat_to_euler(q, order="zyx"):
    """Unit quaternion to intrinsic Euler triple in `order`.

    Near gimbal lock (|sin of middle angle| > 1 - 1e-7) the third angle is
    forced to 0 and the full remaining rotation is assigned to the first.
    """
    order = _check_order(order)
    q = np.asarray(q, dtype=np.float64)
    a, b, c = (AXES[ax] for ax in order)
    eps = _PARITY[order]
    m = _rotmat_entries(q)

    sb = np.clip(eps * m[..., a, c], -1.0, 1.0)
    a2 = np.arcsin(sb)
    locked = np.abs(sb) > 1.0 - GIMBAL_EPS

    a1 = np.arctan2(-eps * m[..., b, c], m[..., c, c])
    a3 = np.arctan2(-eps * m[..., a, b], m[..., a, a])

    # At lock only a1 ± a3 is determined; convention: a3 = 0.
    s = np.sign(sb)
    a1_lock = np.arctan2(s * m[..., b, a], m[..., b, b])
    a1 = np.where(locked, a1_lock, a1)
    a3 = np.where(locked, 0.0, a3)
    return np.stack([a1, a2, a3], axis=-1)


def fix_antipodal(seq):
    """Resolve q/-q sign flips along the time axis (axis 0) of a quaternion series.

    out[0] = seq[0]; each later frame takes the sign closest (in R⁴ Euclidean
    distance) to the previous fixed frame. A global sign per series remains
    free, which is fine: losses never compare quaternions componentwise.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.shape[0] <= 1:
        return seq.copy()
    dots = np.sum(seq[1:] * seq[:-1], axis=-1)
    flips = np.where(dots < 0.0, -1.0, 1.0)
    signs = np.concatenate([np.ones((1,) + flips.shape[1:]), np.cumprod(flips, axis=0)], axis=0)
    return seq * signs[..., None]


def quat_angle_distance(a, b):
    """Rotation angle between orientations: 2·arccos(|a·b|), sign-invariant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = np.abs(np.sum(a * b, axis=-1))
    return 2.0 * np.arccos(np.clip(d, 0.0, 1.0))
