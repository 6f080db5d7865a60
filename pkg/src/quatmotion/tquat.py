"""Differentiable twins of the quaternion core, on torch tensors.

Same (w, x, y, z) layout and Hamilton convention as quat.py; used wherever
gradients must flow (normalization layer, FK positional loss, Euler loss).
All tensors are float64.
"""

from __future__ import annotations

import torch

from .quat import AXES, GIMBAL_EPS, _PARITY, _check_order, DegenerateQuaternion


def qmul(a, b):
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def qconj(q):
    w, x, y, z = q.unbind(-1)
    return torch.stack([w, -x, -y, -z], dim=-1)


def qnormalize(q, eps=1e-12):
    n = torch.linalg.vector_norm(q, dim=-1, keepdim=True)
    if bool((n <= eps).any()):
        raise DegenerateQuaternion(f"quaternion norm {float(n.min()):.3e} <= {eps:.0e}")
    return q / n


def qrotate(q, v):
    zeros = torch.zeros(v.shape[:-1] + (1,), dtype=v.dtype, device=v.device)
    pv = torch.cat([zeros, v], dim=-1)
    return qmul(qmul(q, pv), qconj(q))[..., 1:]


def _rotmat_entries(q):
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


def quat_to_euler(q, order="zyx"):
    """Torch version of quat.quat_to_euler; same lock convention."""
    order = _check_order(order)
    a, b, c = (AXES[ax] for ax in order)
    eps = _PARITY[order]
    m = _rotmat_entries(q)

    sb = torch.clamp(eps * m[..., a, c], -1.0, 1.0)
    a2 = torch.asin(sb)
    locked = sb.abs() > 1.0 - GIMBAL_EPS

    a1 = torch.atan2(-eps * m[..., b, c], m[..., c, c])
    a3 = torch.atan2(-eps * m[..., a, b], m[..., a, a])
    a1_lock = torch.atan2(torch.sign(sb) * m[..., b, a], m[..., b, b])
    a1 = torch.where(locked, a1_lock, a1)
    a3 = torch.where(locked, torch.zeros_like(a3), a3)
    return torch.stack([a1, a2, a3], dim=-1)


def forward_kinematics(parents, offsets, rotations, root_positions=None):
    """Batched FK in pure quaternion space.

    parents: length-J list (root has -1); offsets: (J, 3) tensor;
    rotations: (..., J, 4); root_positions: (..., 3) or None for origin.
    Returns world positions (..., J, 3). All transform composition happens
    through quaternion products; no rotation matrices on this path.
    """
    lead = rotations.shape[:-2]
    if root_positions is None:
        root_positions = torch.zeros(lead + (3,), dtype=rotations.dtype)
    world_rot = [None] * len(parents)
    world_pos = [None] * len(parents)
    for j, p in enumerate(parents):
        rot_j = rotations[..., j, :]
        if p < 0:
            world_rot[j] = rot_j
            world_pos[j] = root_positions
        else:
            off = offsets[j].expand(lead + (3,))
            world_pos[j] = world_pos[p] + qrotate(world_rot[p], off)
            world_rot[j] = qmul(world_rot[p], rot_j)
    return torch.stack(world_pos, dim=-2)
