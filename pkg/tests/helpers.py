"""Shared constructors for test skeletons and clips."""

import numpy as np

from quatmotion import quat
from quatmotion.skeleton import MotionClip, Skeleton, infer_mirror_map


def chain_skeleton(n=3, offset=(0.0, 1.0, 0.0)):
    return Skeleton(
        names=tuple(f"j{i}" for i in range(n)),
        parents=tuple([-1] + list(range(n - 1))),
        offsets=np.tile(np.asarray(offset), (n, 1)),
    )


def random_skeleton(rng, joints=8):
    parents = [-1] + [int(rng.integers(0, j)) for j in range(1, joints)]
    offsets = rng.normal(size=(joints, 3))
    offsets[0] = 0.0
    return Skeleton(
        names=tuple(f"j{i}" for i in range(joints)),
        parents=tuple(parents),
        offsets=offsets,
    )


def random_pose_batch(rng, skeleton, shape=()):
    q = rng.normal(size=shape + (skeleton.joint_count, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    root = rng.normal(size=shape + (3,))
    return q, root


def symmetric_biped_skeleton():
    names = ("Hips", "Spine", "LeftHip", "LeftFoot", "RightHip", "RightFoot")
    parents = (-1, 0, 0, 2, 0, 4)
    offsets = np.array(
        [
            [0.0, 0.0, 0.0],
            [0.0, 0.3, 0.0],
            [0.1, 0.0, 0.0],
            [0.0, -0.4, 0.0],
            [-0.1, 0.0, 0.0],
            [0.0, -0.4, 0.0],
        ]
    )
    skel = Skeleton(names=names, parents=parents, offsets=offsets)
    return skel.with_mirror_map(infer_mirror_map(names))


def random_clip(rng, skeleton, frames=20, frame_rate=25.0):
    rot = rng.normal(size=(frames, skeleton.joint_count, 4))
    rot /= np.linalg.norm(rot, axis=-1, keepdims=True)
    rot = quat.fix_antipodal(rot)
    root = rng.normal(size=(frames, 3))
    return MotionClip(frame_rate=frame_rate, root_positions=root, rotations=rot)
