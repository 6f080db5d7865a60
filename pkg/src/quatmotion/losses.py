"""Training and evaluation objectives.

The training losses (positional, norm penalty, Euler-angle) run on torch
tensors and are differentiable end to end; the evaluation metrics are plain
numpy. Angle differences are always resolved modulo 2π before use.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from . import quat, tquat
from .skeleton import batched_forward_kinematics

TWO_PI = 2.0 * np.pi


class HorizonExceedsPrediction(ValueError):
    pass


@dataclass
class LossConfig:
    lam: float = 0.01          # quaternion norm penalty weight
    euler_order: str = "zyx"   # order for the angle-based losses

    def __post_init__(self):
        if not 0.001 <= self.lam <= 0.1:
            warnings.warn(
                f"norm penalty weight {self.lam} is outside the validated [0.001, 0.1] range",
                stacklevel=2,
            )


def wrap_angle(x):
    """Map angles into (-π, π], elementwise; works on numpy arrays and tensors."""
    if isinstance(x, torch.Tensor):
        return x - TWO_PI * torch.round(x / TWO_PI)
    x = np.asarray(x)
    return x - TWO_PI * np.round(x / TWO_PI)


def _safe_norm(d):
    # sqrt with exactly zero gradient at zero distance (clamp kills the branch)
    ssq = (d * d).sum(-1)
    return torch.sqrt(torch.clamp(ssq, min=1e-300))


def positional_loss(skeleton, pred_rotations, pred_roots, target_positions):
    """Mean Euclidean distance between FK joint positions and reference positions.

    pred_rotations (..., J, 4) must already be normalized; pred_roots may be
    None to keep every root at the origin. Differentiable in every rotation
    component and root coordinate.
    """
    pos = batched_forward_kinematics(skeleton, pred_rotations, pred_roots)
    return _safe_norm(pos - target_positions).mean()


def quat_norm_penalty(raw_quaternions, lam=0.01):
    """λ·mean((w²+x²+y²+z²−1)²) over pre-normalization quaternions."""
    ssq = (raw_quaternions * raw_quaternions).sum(-1)
    return lam * ((ssq - 1.0) ** 2).mean()


def euler_angle_loss(pred_quats, target_eulers, order="zyx"):
    """Mean L1 distance between Euler angles, each difference taken modulo 2π.

    order may be a single string or one string per joint (matching the
    second-to-last axis of pred_quats).
    """
    eul = _quats_to_euler(pred_quats, order)
    return wrap_angle(eul - target_eulers).abs().mean()


def _quats_to_euler(q, order):
    to_euler = tquat.quat_to_euler if isinstance(q, torch.Tensor) else quat.quat_to_euler
    if isinstance(order, str):
        return to_euler(q, order)
    cols = [to_euler(q[..., j, :], o) for j, o in enumerate(order)]
    if isinstance(q, torch.Tensor):
        return torch.stack(cols, dim=-2)
    return np.stack(cols, axis=-2)


def evaluation_angle_error(pred_quats, target_eulers, order="zyx", horizons=(2, 4, 8, 10), include_root=False):
    """Benchmark-protocol angle error at the given horizons (frames, 1-based).

    pred_quats: (sequences, frames, joints, 4); target_eulers matching
    (sequences, frames, joints, 3). Per sequence and horizon, the wrapped
    per-angle differences over all reported joints are flattened and reduced
    with an L2 norm; the result is averaged over sequences. The root joint's
    global rotation is excluded unless include_root is set.
    """
    pred_quats = np.asarray(pred_quats)
    target_eulers = np.asarray(target_eulers)
    frames = pred_quats.shape[1]
    if max(horizons) > frames:
        raise HorizonExceedsPrediction(f"horizon {max(horizons)} > predicted frames {frames}")
    eul = _quats_to_euler(pred_quats, order)
    diff = wrap_angle(eul - target_eulers)
    if not include_root:
        diff = diff[:, :, 1:, :]
    out = []
    for h in horizons:
        flat = diff[:, h - 1].reshape(diff.shape[0], -1)
        out.append(float(np.mean(np.linalg.norm(flat, axis=-1))))
    return np.array(out)


def positional_error_at(skeleton, pred_rots, target_rots, horizons, pred_roots=None, target_roots=None):
    """Mean FK position distance at each horizon frame (numpy evaluation)."""
    frames = pred_rots.shape[1]
    if max(horizons) > frames:
        raise HorizonExceedsPrediction(f"horizon {max(horizons)} > predicted frames {frames}")
    pred_pos = batched_forward_kinematics(skeleton, pred_rots, pred_roots)
    target_pos = batched_forward_kinematics(skeleton, target_rots, target_roots)
    d = np.linalg.norm(pred_pos - target_pos, axis=-1)
    return np.array([float(d[:, h - 1].mean()) for h in horizons])


def mean_angle_distance(pred_rots, target_rots):
    """Mean orientation distance (dot-product angle), representation-independent."""
    return float(np.mean(quat.quat_angle_distance(pred_rots, target_rots)))


def gait_feature_mae(predicted, target):
    """Mean absolute error over gait features, per spline segment.

    Feature columns are (facing angle [rad], step frequency, local speed);
    the facing column is compared as a wrapped angle so ±π is a 0 error,
    not 2π. Accepts numpy arrays or torch tensors.
    """
    if isinstance(predicted, torch.Tensor):
        facing = wrap_angle(predicted[..., 0] - target[..., 0]).abs()
        rest = (predicted[..., 1:] - target[..., 1:]).abs()
        return torch.cat([facing.unsqueeze(-1), rest], dim=-1).mean()
    predicted = np.asarray(predicted)
    target = np.asarray(target)
    facing = np.abs(wrap_angle(predicted[..., 0] - target[..., 0]))
    rest = np.abs(predicted[..., 1:] - target[..., 1:])
    return float(np.concatenate([facing[..., None], rest], axis=-1).mean())
