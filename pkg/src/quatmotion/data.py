"""Dataset ingestion, preprocessing, caching, and the synthetic corpus generator.

Real corpora are user-supplied (exp-map text for the prediction benchmark,
BVH for locomotion); the package ships a deterministic synthetic generator
that produces a walking biped with truly pinned stance feet, which is what
the desk-scale training and gait tests run on.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import quat
from .bvh import ParseError
from .skeleton import MotionClip, Skeleton, infer_mirror_map

CACHE_MAGIC = b"QNDS"
CACHE_VERSION = 1

H36M_SUBJECTS = ("S1", "S5", "S6", "S7", "S8", "S9", "S11")
H36M_TEST_SUBJECT = "S5"
H36M_ACTIONS = (
    "directions", "discussion", "eating", "greeting", "phoning",
    "posing", "purchases", "sitting", "sittingdown", "smoking",
    "takingphoto", "waiting", "walking", "walkingdog", "walkingtogether",
)


class InconsistentWidth(ValueError):
    pass


class MissingData(FileNotFoundError):
    def __init__(self, paths):
        self.paths = [str(p) for p in paths]
        super().__init__("missing data: " + ", ".join(self.paths))


def parse_expmap_text(text, joints=None, has_translation=True):
    """Parse exp-map motion text: one frame per line, whitespace or comma separated.

    Each line holds 3 root translation values (when has_translation) followed
    by 3 exp-map values per joint. The antipodal fix is applied per joint.
    """
    rows = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise ParseError(lineno, f"non-numeric value in {raw!r}") from None
        if width is None:
            width = len(values)
            if width % 3 != 0 or width == 0:
                raise ParseError(lineno, f"line width {width} is not a multiple of 3")
        elif len(values) != width:
            raise InconsistentWidth(f"line {lineno}: width {len(values)} != {width}")
        rows.append(values)
    if not rows:
        raise ParseError(0, "no motion rows")
    table = np.array(rows)
    offset = 3 if has_translation else 0
    n_joints = (table.shape[1] - offset) // 3
    if joints is not None and n_joints != joints:
        raise InconsistentWidth(f"expected {joints} joints, file encodes {n_joints}")
    root_positions = table[:, :3] if has_translation else np.zeros((len(rows), 3))
    exp = table[:, offset:].reshape(len(rows), n_joints, 3)
    rotations = quat.expmap_to_quat(exp)
    rotations = quat.fix_antipodal(rotations)
    return MotionClip(frame_rate=50.0, root_positions=root_positions, rotations=rotations)


def downsample(clip, keep_every, phase=0):
    """Keep frames phase, phase+keep_every, ...; the phases partition the source."""
    if keep_every < 1:
        raise ValueError("keep_every must be >= 1")
    if not 0 <= phase < keep_every:
        raise ValueError("phase must be in [0, keep_every)")
    return replace(
        clip,
        frame_rate=clip.frame_rate / keep_every,
        root_positions=clip.root_positions[phase::keep_every],
        rotations=clip.rotations[phase::keep_every],
    )


def augment_rotation(clip, yaw, vertical_axis="y"):
    """Rotate the whole trajectory by `yaw` radians about the vertical axis."""
    axis = np.zeros(3)
    axis[quat.AXES[vertical_axis]] = 1.0
    q_yaw = quat.axis_angle_quat(axis, yaw)
    roots = quat.qrotate(np.broadcast_to(q_yaw, (clip.frames, 4)), clip.root_positions)
    rotations = clip.rotations.copy()
    rotations[:, 0] = quat.qmul(np.broadcast_to(q_yaw, (clip.frames, 4)), rotations[:, 0])
    return replace(clip, root_positions=roots, rotations=rotations)


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SyntheticSpec:
    preset: str = "biped"            # "biped" or "chain"
    joints: int = 4                  # chain preset only
    clips: int = 8
    frames: int = 300
    frame_rate: float = 25.0
    freq_band: tuple = (0.8, 1.2)    # gait cycles/s (biped) or oscillation Hz (chain)
    amp_band: tuple = (0.3, 0.8)     # chain joint swing amplitude, radians
    distal_noise: float = 0.0        # per-frame end-effector rotation jitter (rad);
                                     # chain: ramped root->leaf, biped: head and feet
    upper_motion: float = 0.0        # biped only: 3-axis spine/head swing scale


def biped_skeleton():
    names = (
        "Hips", "Spine", "Head",
        "LeftHip", "LeftKnee", "LeftFoot",
        "RightHip", "RightKnee", "RightFoot",
    )
    parents = (-1, 0, 1, 0, 3, 4, 0, 6, 7)
    offsets = np.array(
        [
            [0.0, 0.0, 0.0],
            [0.0, 0.25, 0.0],
            [0.0, 0.20, 0.0],
            [0.1, -0.05, 0.0],
            [0.0, -0.45, 0.0],
            [0.0, -0.45, 0.0],
            [-0.1, -0.05, 0.0],
            [0.0, -0.45, 0.0],
            [0.0, -0.45, 0.0],
        ]
    )
    skel = Skeleton(names=names, parents=parents, offsets=offsets)
    return skel.with_mirror_map(infer_mirror_map(names))


_L1 = 0.45
_L2 = 0.45
_REACH = 0.96 * (_L1 + _L2)
_HIP_DROP = 0.05  # hip joints sit this far below the root
_DUTY = 0.6       # stance fraction of the gait cycle
_LEAD = 0.3       # foot lands this fraction of a stride ahead of the hip


def _leg_ik(hip_y, hip_z, foot_y, foot_z):
    """Planar two-link IK: pitch angles (about x) for hip and knee."""
    dy = foot_y - hip_y
    dz = foot_z - hip_z
    r = np.hypot(dy, dz)
    r = np.clip(r, 1e-9, _L1 + _L2 - 1e-9)
    psi = np.arctan2(-dz, -dy)
    cos_a = np.clip((_L1 * _L1 + r * r - _L2 * _L2) / (2.0 * _L1 * r), -1.0, 1.0)
    phi_h = psi - np.arccos(cos_a)
    knee_y = hip_y - _L1 * np.cos(phi_h)
    knee_z = hip_z - _L1 * np.sin(phi_h)
    phi_s = np.arctan2(-(foot_z - knee_z), -(foot_y - knee_y))
    return phi_h, phi_s - phi_h


def _smoothstep(s):
    return s * s * (3.0 - 2.0 * s)


def _foot_track(t, cycle, v, stride, lift, z_of, phase_shift=0.0):
    """Per-frame (y, z, in_stance) for one foot; planted exactly during stance."""
    tt = t + phase_shift * cycle
    k = np.floor(tt / cycle).astype(int)
    s = tt / cycle - k  # phase within the cycle, stance starts at 0

    def plant(kk):
        return z_of(kk * cycle - phase_shift * cycle) + _LEAD * stride

    in_stance = s < _DUTY
    y = np.where(in_stance, 0.0, lift * np.sin(np.pi * (s - _DUTY) / (1.0 - _DUTY)))
    z = np.empty_like(y)
    z[in_stance] = plant(k[in_stance])
    sw = ~in_stance
    u = _smoothstep((s[sw] - _DUTY) / (1.0 - _DUTY))
    z[sw] = (1.0 - u) * plant(k[sw]) + u * plant(k[sw] + 1)
    return y, z, in_stance


def _synthesize_biped_clip(rng, spec, index):
    t = np.arange(spec.frames) / spec.frame_rate
    f = float(rng.uniform(*spec.freq_band))
    if f <= 0.0:
        # standing still: legs straight down, constant pose
        root = np.zeros((spec.frames, 3))
        root[:, 1] = _HIP_DROP + _REACH
        rot = np.zeros((spec.frames, 9, 4))
        rot[..., 0] = 1.0
        return MotionClip(
            frame_rate=spec.frame_rate, root_positions=root, rotations=rot,
            subject=f"syn{index}", action="walk",
        )
    cycle = 1.0 / f
    stride = 0.9 * float(rng.uniform(0.9, 1.1))
    v = stride * f
    lift = 0.06
    wobble = 0.01

    def z_of(tt):
        return v * tt + wobble * np.sin(4.0 * np.pi * f * tt)

    root_z = z_of(t)
    left_y, left_z, _ = _foot_track(t, cycle, v, stride, lift, z_of, 0.0)
    right_y, right_z, _ = _foot_track(t, cycle, v, stride, lift, z_of, 0.5)

    # root height: highest position from which both planted feet stay reachable
    bound = np.full(spec.frames, _REACH)
    for foot_y, foot_z in ((left_y, left_z), (right_y, right_z)):
        dz = np.abs(foot_z - root_z)
        feasible = np.sqrt(np.maximum(_REACH**2 - dz**2, 0.04)) + foot_y
        bound = np.minimum(bound, feasible)
    hip_y = np.convolve(np.pad(bound, 2, mode="edge"), np.ones(5) / 5.0, mode="valid")
    hip_y = np.minimum(hip_y, bound)
    root_y = hip_y + _HIP_DROP

    rot = np.zeros((spec.frames, 9, 4))
    rot[..., 0] = 1.0
    phase0 = float(rng.uniform(0.0, 2.0 * np.pi))
    if spec.upper_motion > 0.0:
        # coupled three-axis torso/head swings (legs stay hinged so the feet
        # remain exactly pinned); the middle-axis swing is the widest, so the
        # Euler decomposition of these rotations passes near gimbal lock
        for j, scale in ((1, 1.0), (2, 0.8)):
            amps = spec.upper_motion * scale * np.array([0.4, 0.8, 0.4]) * rng.uniform(0.8, 1.0, size=3)
            freqs = f * rng.uniform(0.5, 1.5, size=3)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
            angles = amps * np.sin(2.0 * np.pi * freqs * t[:, None] + phases)
            rot[:, j] = quat.fix_antipodal(quat.euler_to_quat(angles, "zyx"))
    else:
        rot[:, 1] = quat.axis_angle_quat([1.0, 0.0, 0.0], 0.08 * np.sin(2 * np.pi * f * t + phase0))
        rot[:, 2] = quat.axis_angle_quat([0.0, 0.0, 1.0], 0.05 * np.sin(2 * np.pi * f * t + phase0 + 0.8))
    for hip_j, knee_j, fy, fz in ((3, 4, left_y, left_z), (6, 7, right_y, right_z)):
        phi_h, phi_k = _leg_ik(hip_y, root_z, fy, fz)
        rot[:, hip_j] = quat.axis_angle_quat([1.0, 0.0, 0.0], phi_h)
        rot[:, knee_j] = quat.axis_angle_quat([1.0, 0.0, 0.0], phi_k)
    if spec.distal_noise > 0.0:
        # unpredictable end-effector chatter: head and feet jitter, which the
        # positional objective correctly discounts (no descendants to move)
        for j in (2, 5, 8):
            jitter = quat.expmap_to_quat(rng.normal(size=(spec.frames, 3)) * spec.distal_noise)
            rot[:, j] = quat.fix_antipodal(quat.qmul(rot[:, j], jitter))

    root = np.stack([np.zeros(spec.frames), root_y, root_z], axis=1)
    return MotionClip(
        frame_rate=spec.frame_rate, root_positions=root, rotations=rot,
        subject=f"syn{index}", action="walk",
    )


def chain_skeleton(joints):
    """Serial chain with varied link directions.

    Links deliberately point different ways so that no joint rotation is a
    pure twist about its entire descendant subtree (which would be invisible
    to FK positions).
    """
    k = np.arange(joints)
    dirs = np.stack([np.sin(2.4 * k), np.ones(joints), np.cos(2.4 * k)], axis=1)
    offsets = 0.3 * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    offsets[0] = 0.0
    return Skeleton(
        names=tuple(f"j{i}" for i in range(joints)),
        parents=tuple([-1] + list(range(joints - 1))),
        offsets=offsets,
    )


def _synthesize_chain_clip(rng, spec, index, axes, amps):
    """Shared per-joint axes/amplitudes across the dataset; frequency and
    phase are the per-clip randomness, so held-out clips share dynamics."""
    t = np.arange(spec.frames) / spec.frame_rate
    rot = np.zeros((spec.frames, spec.joints, 4))
    rot[..., 0] = 1.0
    for j in range(spec.joints):
        f = rng.uniform(*spec.freq_band)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        angles = amps[j] * np.sin(2.0 * np.pi * f * t + phase)
        q = quat.axis_angle_quat(np.broadcast_to(axes[j], (spec.frames, 3)), angles)
        if spec.distal_noise > 0.0 and spec.joints > 1:
            sigma = spec.distal_noise * j / (spec.joints - 1)
            jitter = quat.expmap_to_quat(rng.normal(size=(spec.frames, 3)) * sigma)
            q = quat.fix_antipodal(quat.qmul(q, jitter))
        rot[:, j] = q
    root = np.zeros((spec.frames, 3))
    return MotionClip(
        frame_rate=spec.frame_rate, root_positions=root, rotations=rot,
        subject=f"syn{index}", action="sway",
    )


def make_synthetic_dataset(spec, seed):
    """Deterministic synthetic corpus: (skeleton, clips)."""
    rng = np.random.default_rng(seed)
    if spec.preset == "biped":
        skel = biped_skeleton()
        clips = [_synthesize_biped_clip(rng, spec, i) for i in range(spec.clips)]
    elif spec.preset == "chain":
        skel = chain_skeleton(spec.joints)
        axes = rng.normal(size=(spec.joints, 3))
        axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
        amps = rng.uniform(*spec.amp_band, size=spec.joints)
        clips = [_synthesize_chain_clip(rng, spec, i, axes, amps) for i in range(spec.clips)]
    else:
        raise ValueError(f"unknown synthetic preset {spec.preset!r}")
    return skel, clips


# ---------------------------------------------------------------------------
# cache container


def skeleton_to_dict(skel):
    return {
        "names": list(skel.names),
        "parents": list(skel.parents),
        "offsets": skel.offsets.tolist(),
        "euler_orders": list(skel.euler_orders),
        "end_site": [bool(e) for e in skel.end_site],
        "mirror_map": [-1 if m is None else int(m) for m in skel.mirror_map],
        "scale": skel.scale,
        "vertical_axis": skel.vertical_axis,
    }


def skeleton_from_dict(d):
    return Skeleton(
        names=tuple(d["names"]),
        parents=tuple(d["parents"]),
        offsets=np.array(d["offsets"]),
        euler_orders=tuple(d["euler_orders"]),
        end_site=tuple(d["end_site"]),
        mirror_map=tuple(None if m < 0 else m for m in d["mirror_map"]),
        scale=d["scale"],
        vertical_axis=d["vertical_axis"],
    )


def save_cache(path, skeleton, clips, meta=None):
    """Binary dataset container: QNDS magic, version byte, then per-clip blocks."""
    header = {
        "skeleton": skeleton_to_dict(skeleton),
        "meta": meta or {},
        "clips": len(clips),
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(bytes([CACHE_VERSION]))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for clip in clips:
            tag = {
                "subject": clip.subject,
                "action": clip.action,
                "frame_rate": clip.frame_rate,
                "frames": clip.frames,
                "joints": clip.joints,
            }
            tag_bytes = json.dumps(tag, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(tag_bytes)))
            fh.write(tag_bytes)
            fh.write(np.ascontiguousarray(clip.root_positions).astype("<f8").tobytes())
            fh.write(np.ascontiguousarray(clip.rotations).astype("<f8").tobytes())


def load_cache(path):
    with open(path, "rb") as fh:
        if fh.read(4) != CACHE_MAGIC:
            raise ValueError(f"{path}: not a dataset cache")
        version = fh.read(1)[0]
        if version != CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
        skeleton = skeleton_from_dict(header["skeleton"])
        clips = []
        for _ in range(header["clips"]):
            (tn,) = struct.unpack("<I", fh.read(4))
            tag = json.loads(fh.read(tn).decode("utf-8"))
            frames, joints = tag["frames"], tag["joints"]
            roots = np.frombuffer(fh.read(frames * 3 * 8), dtype="<f8").reshape(frames, 3)
            rots = np.frombuffer(fh.read(frames * joints * 4 * 8), dtype="<f8").reshape(frames, joints, 4)
            clips.append(
                MotionClip(
                    frame_rate=tag["frame_rate"],
                    root_positions=roots.copy(),
                    rotations=rots.copy(),
                    subject=tag["subject"],
                    action=tag["action"],
                )
            )
    return skeleton, clips, header["meta"]


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ClipRecord:
    source: str
    subject: str
    action: str
    split: str  # train | test


@dataclass
class DatasetManifest:
    protocol: str
    seed: int = 0
    cache: str = ""
    preprocess: dict = field(default_factory=dict)
    clips: list = field(default_factory=list)

    def to_text(self):
        lines = ["# quatmotion dataset manifest v1"]
        lines.append(f"protocol = {self.protocol}")
        lines.append(f"seed = {self.seed}")
        lines.append(f"cache = {self.cache}")
        for k, v in sorted(self.preprocess.items()):
            lines.append(f"preprocess.{k} = {v}")
        for c in self.clips:
            lines.append(f"clip\t{c.source}\t{c.subject}\t{c.action}\t{c.split}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        manifest = cls(protocol="")
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("clip\t") or line.startswith("clip "):
                parts = line.split("\t") if "\t" in line else line.split()
                _, source, subject, action, split = parts
                manifest.clips.append(ClipRecord(source, subject, action, split))
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "protocol":
                manifest.protocol = value
            elif key == "seed":
                manifest.seed = int(value)
            elif key == "cache":
                manifest.cache = value
            elif key.startswith("preprocess."):
                manifest.preprocess[key[len("preprocess."):]] = value
        return manifest

    def split_indices(self, split):
        return [i for i, c in enumerate(self.clips) if c.split == split]


def build_manifest(root_dir, protocol, test_subject=H36M_TEST_SUBJECT, seed=0):
    """Scan a data directory into a manifest for the given protocol.

    h36m_short_term expects h36m/<subject>/<action>_<n>.txt with the held-out
    test subject; locomotion expects locomotion/*.bvh. Raises MissingData when
    the layout is empty.
    """
    root = Path(root_dir)
    if protocol == "h36m_short_term":
        base = root / "h36m"
        if not base.is_dir():
            raise MissingData([base])
        manifest = DatasetManifest(
            protocol=protocol,
            seed=seed,
            preprocess={"downsample": "2", "target_rate": "25", "phases": "even,odd"},
        )
        files = sorted(base.glob("*/*.txt"))
        if not files:
            raise MissingData([base / "<subject>/<action>.txt"])
        for f in files:
            subject = f.parent.name
            action = f.stem.split("_")[0].lower()
            split = "test" if subject == test_subject else "train"
            manifest.clips.append(ClipRecord(str(f.relative_to(root)), subject, action, split))
        return manifest
    if protocol == "locomotion":
        base = root / "locomotion"
        if not base.is_dir():
            raise MissingData([base])
        files = sorted(base.glob("*.bvh"))
        if not files:
            raise MissingData([base / "*.bvh"])
        manifest = DatasetManifest(
            protocol=protocol,
            seed=seed,
            preprocess={"downsample": "4", "target_rate": "30", "mirror": "on", "yaw_augment": "on"},
        )
        rng = np.random.default_rng(seed)
        test_picks = set(rng.choice(len(files), size=max(1, len(files) // 10), replace=False).tolist())
        for i, f in enumerate(files):
            split = "test" if i in test_picks else "train"
            manifest.clips.append(ClipRecord(str(f.relative_to(root)), f.stem, "locomotion", split))
        return manifest
    raise ValueError(f"unknown protocol {protocol!r}")


def validate_ingested_clip(clip):
    """Ingestion invariants: unit quaternions, antipodal continuity, finite values."""
    if not np.all(np.isfinite(clip.rotations)) or not np.all(np.isfinite(clip.root_positions)):
        raise ValueError("clip contains non-finite values")
    norms = np.linalg.norm(clip.rotations, axis=-1)
    if np.max(np.abs(norms - 1.0)) > 1e-9:
        raise ValueError("clip rotations are not unit quaternions")
    if clip.frames > 1:
        d_keep = np.linalg.norm(clip.rotations[1:] - clip.rotations[:-1], axis=-1)
        d_flip = np.linalg.norm(clip.rotations[1:] + clip.rotations[:-1], axis=-1)
        if np.any(d_keep > d_flip + 1e-12):
            raise ValueError("clip rotation series is not antipodally continuous")
    return clip
