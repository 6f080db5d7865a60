"""Skeleton hierarchy, poses, motion clips, and forward kinematics.

A Skeleton is immutable after construction: joint names, parent indices
(topologically sorted, root first), constant bone offsets, per-joint Euler
orders, end-site flags and an optional mirror map. Bone lengths are a
property of the skeleton, never of a pose.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from . import quat, tquat


class MissingMirrorMap(ValueError):
    """A non-midline joint has no mirror partner."""


@dataclass(frozen=True)
class Skeleton:
    names: tuple[str, ...]
    parents: tuple[int, ...]              # -1 for the root
    offsets: np.ndarray                   # (J, 3)
    euler_orders: tuple[str, ...] = ()    # per joint; "zyx" when empty
    end_site: tuple[bool, ...] = ()       # joints without rotation channels
    mirror_map: tuple = ()                # partner index or None, per joint
    scale: float = 1.0
    vertical_axis: str = "y"

    def __post_init__(self):
        j = len(self.names)
        offsets = np.asarray(self.offsets, dtype=np.float64).reshape(j, 3)
        offsets.flags.writeable = False
        object.__setattr__(self, "offsets", offsets)
        if not self.euler_orders:
            object.__setattr__(self, "euler_orders", ("zyx",) * j)
        if not self.end_site:
            object.__setattr__(self, "end_site", (False,) * j)
        if not self.mirror_map:
            object.__setattr__(self, "mirror_map", (None,) * j)
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if roots != [0]:
            raise ValueError(f"expected exactly one root at index 0, found roots at {roots}")
        for i, p in enumerate(self.parents):
            if i > 0 and not 0 <= p < i:
                raise ValueError(f"joint {i} has parent {p}; parents must precede children")
        for i, m in enumerate(self.mirror_map):
            if m is not None and self.mirror_map[m] != i:
                raise ValueError(f"mirror map is not symmetric at joint {self.names[i]}")

    @property
    def joint_count(self):
        return len(self.names)

    @property
    def ground_axes(self):
        """Indices of the two ground-plane coordinates (vertical axis removed)."""
        v = quat.AXES[self.vertical_axis]
        return tuple(i for i in range(3) if i != v)

    @property
    def vertical_index(self):
        return quat.AXES[self.vertical_axis]

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownJoint(name) from None

    def children(self, j):
        return [i for i, p in enumerate(self.parents) if p == j]

    def bone_lengths(self):
        """Expected parent-to-child distances, one per joint (0 for the root)."""
        return np.linalg.norm(self.offsets, axis=-1) * self.scale

    def with_mirror_map(self, mirror_map):
        return replace(self, mirror_map=tuple(mirror_map))

    def with_euler_orders(self, euler_orders):
        return replace(self, euler_orders=tuple(euler_orders))


class UnknownJoint(KeyError):
    pass


@dataclass(frozen=True)
class Pose:
    root_position: np.ndarray   # (3,)
    rotations: np.ndarray       # (J, 4) unit quaternions, local to parent


@dataclass(frozen=True)
class MotionClip:
    """Fixed-rate time series of root translations and local joint rotations."""

    frame_rate: float
    root_positions: np.ndarray  # (T, 3)
    rotations: np.ndarray       # (T, J, 4)
    subject: str = ""
    action: str = ""

    def __post_init__(self):
        rp = np.ascontiguousarray(self.root_positions, dtype=np.float64)
        rot = np.ascontiguousarray(self.rotations, dtype=np.float64)
        rp.flags.writeable = False
        rot.flags.writeable = False
        object.__setattr__(self, "root_positions", rp)
        object.__setattr__(self, "rotations", rot)

    @property
    def frames(self):
        return self.rotations.shape[0]

    @property
    def joints(self):
        return self.rotations.shape[1]

    def pose(self, t):
        return Pose(self.root_positions[t], self.rotations[t])


def forward_kinematics(skeleton, pose):
    """World joint positions of one pose, composed entirely in quaternion space."""
    return batched_forward_kinematics(skeleton, pose.rotations, pose.root_position)


def batched_forward_kinematics(skeleton, rotations, root_positions=None):
    """FK vectorized over arbitrary leading dimensions of `rotations` (..., J, 4).

    Accepts numpy arrays or torch tensors and returns the same kind; the torch
    path is differentiable and is the one the positional loss trains through.
    """
    scaled = skeleton.offsets * skeleton.scale
    if isinstance(rotations, torch.Tensor):
        offs = torch.as_tensor(scaled, dtype=rotations.dtype)
        return tquat.forward_kinematics(skeleton.parents, offs, rotations, root_positions)

    rotations = np.asarray(rotations, dtype=np.float64)
    lead = rotations.shape[:-2]
    if root_positions is None:
        root_positions = np.zeros(lead + (3,))
    else:
        root_positions = np.broadcast_to(np.asarray(root_positions, dtype=np.float64), lead + (3,))
    world_rot = [None] * skeleton.joint_count
    world_pos = [None] * skeleton.joint_count
    for j, p in enumerate(skeleton.parents):
        rot_j = rotations[..., j, :]
        if p < 0:
            world_rot[j] = rot_j
            world_pos[j] = root_positions
        else:
            off = np.broadcast_to(scaled[j], lead + (3,))
            world_pos[j] = world_pos[p] + quat.qrotate(world_rot[p], off)
            world_rot[j] = quat.qmul(world_rot[p], rot_j)
    return np.stack(world_pos, axis=-2)


def bone_length_error(skeleton, positions):
    """Max relative deviation of inter-joint distances from the skeleton's bone lengths.

    positions: (..., J, 3). Joints with zero-length offsets are skipped.
    """
    positions = np.asarray(positions)
    expected = skeleton.bone_lengths()
    worst = 0.0
    for j, p in enumerate(skeleton.parents):
        if p < 0 or expected[j] == 0.0:
            continue
        d = np.linalg.norm(positions[..., j, :] - positions[..., p, :], axis=-1)
        worst = max(worst, float(np.max(np.abs(d - expected[j]) / expected[j])))
    return worst


def prune_constant_joints(skeleton, clips, tolerance=1e-6):
    """Remove non-root joints whose rotation never deviates from its first-frame value.

    The removed constant rotation is baked into each child's offset and the
    child's local rotation stream, so FK positions of retained joints are
    unchanged. End-site joints are never pruned.
    """
    if not clips:
        raise ValueError("prune_constant_joints needs at least one clip")
    j_count = skeleton.joint_count
    ref = clips[0].rotations[0]
    removed = np.zeros(j_count, dtype=bool)
    for j in range(1, j_count):
        if skeleton.end_site[j]:
            continue
        dev = max(
            float(np.max(quat.quat_angle_distance(c.rotations[:, j], ref[j]))) for c in clips
        )
        if dev <= tolerance:
            removed[j] = True

    if not removed.any():
        return skeleton, list(clips)

    # attach[j] = (kept parent, offset in that parent's frame, accumulated pre-rotation)
    attach = {0: (-1, skeleton.offsets[0].copy(), quat.IDENTITY.copy())}
    for j in range(1, j_count):
        p = skeleton.parents[j]
        if removed[p]:
            kp, t_p, q_p = attach[p]
            t_j = t_p + quat.qrotate(q_p, skeleton.offsets[j])
            q_j = quat.qmul(q_p, ref[j]) if removed[j] else q_p
            base = (kp, t_j, q_j)
        else:
            base = (p, skeleton.offsets[j].copy(), ref[j].copy() if removed[j] else quat.IDENTITY.copy())
        attach[j] = base

    keep = [j for j in range(j_count) if not removed[j]]
    new_index = {j: i for i, j in enumerate(keep)}
    new_offsets = []
    new_parents = []
    pre_rots = []
    for j in keep:
        kp, t_j, q_pre = attach[j]
        new_parents.append(new_index[kp] if kp >= 0 else -1)
        new_offsets.append(t_j)
        pre_rots.append(q_pre)

    new_skeleton = Skeleton(
        names=tuple(skeleton.names[j] for j in keep),
        parents=tuple(new_parents),
        offsets=np.stack(new_offsets),
        euler_orders=tuple(skeleton.euler_orders[j] for j in keep),
        end_site=tuple(skeleton.end_site[j] for j in keep),
        scale=skeleton.scale,
        vertical_axis=skeleton.vertical_axis,
    )
    new_clips = []
    for c in clips:
        rot = np.stack(
            [quat.qmul(np.broadcast_to(pre_rots[i], (c.frames, 4)), c.rotations[:, j]) for i, j in enumerate(keep)],
            axis=1,
        )
        new_clips.append(replace(c, rotations=rot))
    return new_skeleton, new_clips


def infer_mirror_map(names, overrides=None):
    """Pair Left*/Right* joints by name; everything else is midline (self-paired).

    overrides maps joint name -> partner name and wins over prefix matching.
    Returns a list with None for joints that could not be paired.
    """
    overrides = dict(overrides or {})
    result = [None] * len(names)
    index = {n: i for i, n in enumerate(names)}
    for i, name in enumerate(names):
        if name in overrides:
            partner = overrides[name]
            if partner not in index:
                raise UnknownJoint(partner)
            result[i] = index[partner]
            continue
        low = name.lower()
        if low.startswith("left"):
            partner = _swap_prefix(name, "left", "right")
        elif low.startswith("right"):
            partner = _swap_prefix(name, "right", "left")
        else:
            result[i] = i
            continue
        result[i] = index.get(partner)
    return result


def _swap_prefix(name, old, new):
    head = name[: len(old)]
    if head.isupper():
        rep = new.upper()
    elif head[0].isupper():
        rep = new.capitalize()
    else:
        rep = new
    return rep + name[len(old):]


def _reflect_quats(rotations, plane_axis_index):
    """Conjugate rotations by the reflection across the plane normal to the axis."""
    signs = -np.ones(4)
    signs[0] = 1.0
    signs[1 + plane_axis_index] = 1.0
    return rotations * signs


def mirror_clip(skeleton, clip, plane="x"):
    """Reflect a clip across the sagittal plane, swapping left/right joints.

    Requires a complete mirror map on the skeleton (MissingMirrorMap otherwise).
    FK of the result equals the reflected FK of the input with left/right
    labels exchanged.
    """
    missing = [skeleton.names[j] for j, m in enumerate(skeleton.mirror_map) if m is None]
    if missing:
        raise MissingMirrorMap(f"joints without mirror partner: {missing}")
    k = quat.AXES[plane]
    partners = list(skeleton.mirror_map)
    new_rot = _reflect_quats(clip.rotations[:, partners], k)
    new_root = clip.root_positions.copy()
    new_root[:, k] *= -1.0
    return replace(clip, root_positions=new_root, rotations=new_rot)


def load_skeleton_overrides(text):
    """Parse the override file: `mirror <a> <b>` and `euler_order <joint> <order>` lines."""
    mirror = {}
    orders = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "mirror" and len(parts) == 3:
            mirror[parts[1]] = parts[2]
            mirror[parts[2]] = parts[1]
        elif parts[0] == "euler_order" and len(parts) == 3:
            orders[parts[1]] = parts[2].lower()
        else:
            raise ValueError(f"override line {lineno}: cannot parse {raw!r}")
    return mirror, orders
