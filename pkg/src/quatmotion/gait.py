"""Trajectory splines, gait features, the pace network, and locomotion sessions.

The trajectory is a piecewise-linear spline with exactly equal-length chords;
gait features (facing, footstep frequency, local speed, spline offset) are
extracted per frame from recordings and averaged per segment for the pace
network, which recurses over segments rather than frames.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from .losses import gait_feature_mae
from .nn import (
    Adam,
    Dense,
    GruLayer,
    NonFiniteLoss,
    ParamStore,
    backward,
    load_checkpoint,
    save_checkpoint,
)
from .skeleton import batched_forward_kinematics


class DegeneratePath(ValueError):
    pass


class InsufficientContacts(ValueError):
    pass


class EndOfTrajectory(Exception):
    """The spline is exhausted; the session stays open awaiting an extension."""


class PathBehindCharacter(ValueError):
    pass


class IncompatibleSkeleton(ValueError):
    pass


# ---------------------------------------------------------------------------
# spline


@dataclass(frozen=True)
class TrajectorySpline:
    """Equal-chord-length piecewise-linear ground path."""

    points: np.ndarray       # (S+1, 2) chord endpoints
    segment_length: float

    @property
    def segment_count(self):
        return len(self.points) - 1

    @property
    def total_length(self):
        return self.segment_count * self.segment_length

    @property
    def tangents(self):
        d = np.diff(self.points, axis=0)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    @property
    def curvature(self):
        """Signed turn angle from each segment to the next (last segment: 0)."""
        t = self.tangents
        out = np.zeros(self.segment_count)
        if self.segment_count > 1:
            a, b = t[:-1], t[1:]
            out[:-1] = np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], (a * b).sum(-1))
        return out

    def segment_at(self, s):
        return int(np.clip(s // self.segment_length, 0, self.segment_count - 1))

    def point_at(self, s):
        s = float(np.clip(s, 0.0, self.total_length))
        i = self.segment_at(s)
        frac = s - i * self.segment_length
        return self.points[i] + self.tangents[i] * frac

    def tangent_at(self, s):
        return self.tangents[self.segment_at(s)]


def _dedupe(points):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return pts
    keep = [0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-12:
            keep.append(i)
    return pts[keep]


def _march(start, raw_points, segment_length):
    """March equal-length chords along a polyline starting from `start`.

    Returns (new chord points, leftover polyline). The leftover begins at the
    last chord point and keeps every raw point after it, so marching can
    resume through the same geometry when the path is extended later.
    """
    out = []
    c = np.asarray(start, dtype=np.float64)
    pts = [c] + [np.asarray(p, dtype=np.float64) for p in raw_points]
    j = 0
    jc = 0  # index of the last chord point within pts
    while j < len(pts) - 1:
        a, b = pts[j], pts[j + 1]
        d = b - a
        aa = float(d @ d)
        if aa < 1e-24:
            j += 1
            continue
        bb = 2.0 * float((a - c) @ d)
        cc = float((a - c) @ (a - c)) - segment_length**2
        disc = bb * bb - 4.0 * aa * cc
        t = (-bb + np.sqrt(disc)) / (2.0 * aa) if disc >= 0.0 else np.inf
        if 0.0 <= t <= 1.0:
            c = a + t * d
            out.append(c)
            pts[j] = c  # continue from the new chord point on this segment
            jc = j
        else:
            j += 1
    leftover = pts[jc:] if out else pts
    return out, leftover


def fit_spline(points, segment_length):
    """Resample a polyline into a spline of exactly equal-length chords.

    Any final stretch shorter than segment_length is dropped. Raises
    DegeneratePath when less than one full segment of path exists.
    """
    if segment_length <= 0:
        raise ValueError("segment_length must be positive")
    pts = _dedupe(points)
    if len(pts) < 2:
        raise DegeneratePath("trajectory has no extent")
    chords, _ = _march(pts[0], pts[1:], segment_length)
    if not chords:
        raise DegeneratePath(
            f"trajectory arc length is below one segment_length ({segment_length})"
        )
    return TrajectorySpline(points=np.vstack([pts[0], chords]), segment_length=segment_length)


# ---------------------------------------------------------------------------
# feature extraction


def extract_root_trajectory(skeleton, clip):
    """Ground-plane root path (T, 2) and per-frame root heights (T,)."""
    gx, gz = skeleton.ground_axes
    roots = clip.root_positions
    return roots[:, [gx, gz]].copy(), roots[:, skeleton.vertical_index].copy()


def forward_directions(skeleton, clip, left_hip="LeftHip", right_hip="RightHip"):
    """Per-frame character forward direction on the ground plane (unit, (T, 2)).

    Forward is the horizontal perpendicular of the left-to-right hip axis.
    """
    li, ri = skeleton.index(left_hip), skeleton.index(right_hip)
    pos = batched_forward_kinematics(skeleton, clip.rotations, clip.root_positions)
    gx, gz = skeleton.ground_axes
    axis = pos[:, li][:, [gx, gz]] - pos[:, ri][:, [gx, gz]]
    fwd = np.stack([-axis[:, 1], axis[:, 0]], axis=1)
    n = np.linalg.norm(fwd, axis=-1, keepdims=True)
    n[n < 1e-12] = 1.0
    return fwd / n


@dataclass
class FootContacts:
    left: np.ndarray    # (T,) bool
    right: np.ndarray   # (T,) bool

    @property
    def left_onsets(self):
        return _onsets(self.left)

    @property
    def right_onsets(self):
        return _onsets(self.right)


def _onsets(mask):
    # touchdown events only: a contact already present at frame 0 is not an onset
    m = mask.astype(int)
    return np.flatnonzero(np.diff(m) == 1) + 1


def _debounce(mask, min_run=2):
    out = mask.copy()
    runs = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(int), [0]])))
    for start, stop in zip(runs[::2], runs[1::2]):
        if stop - start < min_run:
            out[start:stop] = False
    return out


def detect_foot_contacts(skeleton, clip, foot_joints=("LeftFoot", "RightFoot"), speed_threshold=0.3):
    """Per-frame stance detection: a foot is in contact when its speed drops
    below speed_threshold (length units/s). Contact runs shorter than 2 frames
    are discarded."""
    indices = [skeleton.index(n) for n in foot_joints]
    pos = batched_forward_kinematics(skeleton, clip.rotations, clip.root_positions)
    masks = []
    for j in indices:
        p = pos[:, j]
        speed = np.linalg.norm(np.diff(p, axis=0), axis=-1) * clip.frame_rate
        contact = np.concatenate([[False], speed < speed_threshold])
        contact[0] = contact[1] if len(contact) > 1 else False
        masks.append(_debounce(contact))
    return FootContacts(left=masks[0], right=masks[1])


def build_phase_signal(contacts, frame_rate):
    """Unwrapped walk-cycle phase: 2πk at the k-th left onset, 2πk+π at the
    following right onset, linear in between, clamped flat at the ends."""
    left = contacts.left_onsets
    right = contacts.right_onsets
    if len(left) == 0 or len(right) == 0:
        raise InsufficientContacts("need at least one left and one right contact onset")
    events = sorted([(int(f), "L") for f in left] + [(int(f), "R") for f in right])
    frames, phases = [], []
    k_left = 0
    for f, side in events:
        if side == "L":
            theta = 2.0 * np.pi * k_left
            k_left += 1
        else:
            theta = 2.0 * np.pi * (k_left - 1) + np.pi
        if frames and f <= frames[-1]:
            continue
        if phases and theta <= phases[-1]:
            continue
        frames.append(f)
        phases.append(theta)
    t = np.arange(len(contacts.left))
    return np.interp(t, frames, phases)


@dataclass
class GaitFeatures:
    """Per-frame gait description extracted from a recording."""

    instantaneous_speed: np.ndarray
    local_speed: np.ndarray
    step_frequency: np.ndarray   # footsteps per second
    facing: np.ndarray           # radians relative to the trajectory tangent
    spline_offset: np.ndarray
    arc: np.ndarray              # cumulative arc length per frame
    theta: np.ndarray            # unwrapped walk-cycle phase


def compute_gait_features(trajectory, contacts, frame_rate, lowpass_window=31, forward_dirs=None):
    """Per-frame (local speed, step frequency, facing, spline offset).

    local speed is a centered moving average (edge-replicated) of the
    instantaneous speed; the spline offset integrates the difference, so
    integral-of-local-speed + offset reproduces the true arc length exactly.
    """
    traj = np.asarray(trajectory, dtype=np.float64)
    frames = len(traj)
    if frames < 2:
        raise DegeneratePath("trajectory has fewer than 2 frames")
    d = np.linalg.norm(np.diff(traj, axis=0), axis=-1)
    arc = np.concatenate([[0.0], np.cumsum(d)])
    if arc[-1] < 1e-9:
        raise DegeneratePath("trajectory has (near) zero arc length")
    inst = np.concatenate([[d[0]], d]) * frame_rate

    w = max(1, int(lowpass_window))
    pad = w // 2
    padded = np.pad(inst, pad, mode="edge")
    local = np.convolve(padded, np.ones(w) / w, mode="valid")

    # offset[t] = arc[t] - integral of local speed; conservation is exact
    local_integral = np.concatenate([[0.0], np.cumsum(local[1:] / frame_rate)])
    offset = arc - local_integral

    theta = build_phase_signal(contacts, frame_rate)
    step_freq = np.gradient(theta) * frame_rate / np.pi

    tangents = np.gradient(traj, axis=0)
    n = np.linalg.norm(tangents, axis=-1, keepdims=True)
    n[n < 1e-12] = 1.0
    tangents = tangents / n
    if forward_dirs is None:
        facing = np.zeros(frames)
    else:
        fwd = np.asarray(forward_dirs, dtype=np.float64)
        cross = tangents[:, 0] * fwd[:, 1] - tangents[:, 1] * fwd[:, 0]
        dot = (tangents * fwd).sum(-1)
        facing = np.arctan2(cross, dot)

    return GaitFeatures(
        instantaneous_speed=inst,
        local_speed=local,
        step_frequency=step_freq,
        facing=facing,
        spline_offset=offset,
        arc=arc,
        theta=theta,
    )


def segment_annotations(spline, features):
    """Average per-frame features over spline segments -> (S, 3) array with
    columns (facing, step_frequency, local_speed). Empty segments are filled
    by interpolation from their neighbors."""
    s_count = spline.segment_count
    seg = np.clip((features.arc // spline.segment_length).astype(int), 0, s_count - 1)
    out = np.full((s_count, 3), np.nan)
    for i in range(s_count):
        m = seg == i
        if not m.any():
            continue
        facing = np.arctan2(np.sin(features.facing[m]).mean(), np.cos(features.facing[m]).mean())
        out[i] = (facing, features.step_frequency[m].mean(), features.local_speed[m].mean())
    for col in range(3):
        col_vals = out[:, col]
        holes = np.isnan(col_vals)
        if holes.all():
            raise DegeneratePath("no frames mapped to any spline segment")
        if holes.any():
            idx = np.flatnonzero(~holes)
            out[holes, col] = np.interp(np.flatnonzero(holes), idx, col_vals[idx])
    return out


def walk_cycle_signal(amplitude, theta):
    """The control pair A[cos θ, sin θ]."""
    return np.array([amplitude * np.cos(theta), amplitude * np.sin(theta)])


# ---------------------------------------------------------------------------
# pace network


@dataclass
class PaceConfig:
    hidden: int = 30
    delay: int = 4   # segments of delay in online mode


class PaceNet:
    """GRU over spline segments predicting (facing versor, frequency, speed).

    Two output heads: a bidirectional one for offline annotation and a delayed
    one that reads segment i+delay to emit segment i, suitable for streaming.
    """

    def __init__(self, config, seed=0):
        self.config = config
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        h = config.hidden
        self.fwd = GruLayer(self.store, "pace.fwd", 1, h, rng)
        self.bwd = GruLayer(self.store, "pace.bwd", 1, h, rng)
        self.head_bi = Dense(self.store, "pace.head_bi", 2 * h, 4, rng)
        self.head_delay = Dense(self.store, "pace.head_delay", h, 4, rng)

    def _recurse(self, layer, curvatures):
        b, s = curvatures.shape
        h = layer.initial_state(b)
        states = []
        for i in range(s):
            h = layer.step(curvatures[:, i : i + 1], h)
            states.append(h)
        return torch.stack(states, dim=1)  # (B, S, hidden)

    def outputs(self, curvatures, mode="bidirectional"):
        """Head outputs per segment: (..., S, 4) as (fx, fy, frequency, speed).

        curvatures: (S,) or (B, S).
        """
        curvatures = torch.as_tensor(np.asarray(curvatures, dtype=np.float64))
        squeeze = curvatures.ndim == 1
        if squeeze:
            curvatures = curvatures[None]
        hf = self._recurse(self.fwd, curvatures)
        if mode == "bidirectional":
            hb = self._recurse(self.bwd, torch.flip(curvatures, dims=(1,))).flip(dims=(1,))
            out = self.head_bi(torch.cat([hf, hb], dim=-1))
        elif mode == "delayed":
            d = self.config.delay
            s = curvatures.shape[1]
            idx = torch.clamp(torch.arange(s) + d, max=s - 1)
            out = self.head_delay(hf[:, idx])
        else:
            raise ValueError(f"unknown pace mode {mode!r}")
        return out[0] if squeeze else out

    @staticmethod
    def outputs_to_features(out):
        """(..., 4) head outputs -> (..., 3) features (facing, frequency, speed)."""
        facing = torch.atan2(out[..., 1], out[..., 0])
        return torch.stack([facing, out[..., 2], out[..., 3]], dim=-1)

    def annotate(self, spline, mode="bidirectional"):
        """Inference: per-segment (facing, step frequency, local speed), numpy.

        Frequency and speed are clamped to be nonnegative.
        """
        with torch.no_grad():
            feats = self.outputs_to_features(self.outputs(spline.curvature, mode)).numpy()
        feats[:, 1:] = np.maximum(feats[:, 1:], 0.0)
        return feats


def pace_forward(net, spline, mode="bidirectional"):
    return net.annotate(spline, mode)


def train_pace_net(net, dataset, epochs, seed=0, lr=0.01, mode="bidirectional"):
    """Full-batch MAE training on (curvature sequence, target features) pairs.

    dataset: list of (spline_or_curvatures, (S, 3) target features); sequences
    of equal length are batched together. mode "both" trains the bidirectional
    and delayed heads jointly over the shared forward recursion. Returns the
    per-epoch loss history.
    """
    torch.set_num_threads(1)
    by_length = {}
    for spline_or_curv, target in dataset:
        curv = spline_or_curv.curvature if isinstance(spline_or_curv, TrajectorySpline) else spline_or_curv
        curv = np.asarray(curv, dtype=np.float64)
        by_length.setdefault(len(curv), []).append((curv, np.asarray(target, dtype=np.float64)))
    batches = [
        (torch.as_tensor(np.stack([c for c, _ in group])),
         torch.as_tensor(np.stack([t for _, t in group])))
        for group in by_length.values()
    ]
    opt = Adam(net.store, lr=lr, clip_norm=0.1, lr_decay=0.999)
    history = []
    modes = ("bidirectional", "delayed") if mode == "both" else (mode,)
    for epoch in range(epochs):
        net.store.zero_grad()
        total = None
        for curv, target in batches:
            loss = 0.0
            for m in modes:
                feats = net.outputs_to_features(net.outputs(curv, m))
                loss = loss + gait_feature_mae(feats, target)
            loss = loss / len(modes) * curv.shape[0]
            total = loss if total is None else total + loss
        total = total / len(dataset)
        if not torch.isfinite(total):
            raise NonFiniteLoss(f"pace training produced non-finite loss at epoch {epoch}")
        backward(total)
        opt.step(epoch)
        history.append(float(total.detach()))
    return history


def save_pace_checkpoint(path, net, *, extras=None):
    header = {"kind": "pace", "config": asdict(net.config), "extras": extras or {}}
    save_checkpoint(path, header, net.store.to_arrays())


def load_pace_checkpoint(path):
    header, tensors = load_checkpoint(path)
    if header.get("kind") != "pace":
        raise ValueError(f"{path} is not a pace checkpoint")
    net = PaceNet(PaceConfig(**header["config"]), seed=0)
    net.store.load_values(tensors)
    return net, header


# ---------------------------------------------------------------------------
# locomotion feature preparation (training side)


def locomotion_features(skeleton, clip, lowpass_window=31, speed_threshold=0.3,
                        foot_joints=("LeftFoot", "RightFoot")):
    """Everything the pose network needs from one recording.

    Returns a dict with per-frame controls (6), translations (2), the average
    ground position and tangent used to reconstruct the root during training,
    plus the raw features.
    """
    traj, heights = extract_root_trajectory(skeleton, clip)
    contacts = detect_foot_contacts(skeleton, clip, foot_joints, speed_threshold)
    fwd = forward_directions(skeleton, clip)
    feats = compute_gait_features(traj, contacts, clip.frame_rate, lowpass_window, forward_dirs=fwd)

    tangents = np.gradient(traj, axis=0)
    n = np.linalg.norm(tangents, axis=-1, keepdims=True)
    n[n < 1e-12] = 1.0
    tangents = tangents / n
    tangent_angle = np.arctan2(tangents[:, 1], tangents[:, 0])
    facing_angle = tangent_angle + feats.facing
    facing_versor = np.stack([np.cos(facing_angle), np.sin(facing_angle)], axis=1)

    amp = feats.local_speed
    walk = np.stack([amp * np.cos(feats.theta), amp * np.sin(feats.theta)], axis=1)
    controls = np.concatenate([tangents, facing_versor, walk], axis=1)
    translations = np.stack([heights, feats.spline_offset], axis=1)

    # ground position from integrating the local (average) speed
    local_arc = feats.arc - feats.spline_offset
    base = np.stack(
        [np.interp(local_arc, feats.arc, traj[:, 0]), np.interp(local_arc, feats.arc, traj[:, 1])],
        axis=1,
    )
    return {
        "controls": controls,
        "translations": translations,
        "base_ground": base,
        "tangents": tangents,
        "features": feats,
        "contacts": contacts,
        "trajectory": traj,
        "heights": heights,
    }


# ---------------------------------------------------------------------------
# generation session


@dataclass
class FrameData:
    index: int
    timestamp: float
    theta: float               # mod 2π
    root_position: np.ndarray  # (3,)
    rotations: np.ndarray      # (J, 4)
    positions: np.ndarray      # (J, 3)


class LocomotionSession:
    """Stateful online generation along a (growable) trajectory.

    The root ground position is read off the spline at the integrated
    local-speed arc length plus the predicted longitudinal offset; the root
    height comes from the translations head. θ advances by the predicted
    stride frequency. One step produces exactly one frame.
    """

    def __init__(self, skeleton, pose_net, pace_net, trajectory_points=None, *,
                 target_speed=1.0, frame_rate=25.0, segment_length=0.2,
                 prefix=None, pace_mode="delayed", facing_offset=0.0):
        if not pose_net.config.include_controls or not pose_net.config.include_translations:
            raise IncompatibleSkeleton(
                "generation needs a pose network trained with controls and translations"
            )
        self.skeleton = skeleton
        self.pose_net = pose_net
        self.pace_net = pace_net
        self.frame_rate = float(frame_rate)
        self.segment_length = float(segment_length)
        self.pace_mode = pace_mode
        self.facing_offset = float(facing_offset)
        self.target_speed = float(target_speed)

        self._points = None        # chord endpoints once a path exists
        self._leftover = None      # raw polyline tail not yet long enough for a chord
        self._pending_start = []   # raw points accumulated before the first chord
        self._annotation = None
        if trajectory_points is not None and len(trajectory_points) > 0:
            pts = _dedupe(trajectory_points)
            if len(pts) < 2:
                raise DegeneratePath("trajectory has no extent")
            chords, leftover = _march(pts[0], pts[1:], self.segment_length)
            if not chords:
                raise DegeneratePath("trajectory shorter than one segment")
            self._points = [pts[0]] + list(chords)
            self._leftover = leftover

        self.frame_index = 0
        self.arc = 0.0        # integrated local-speed position
        if prefix is None:
            raise ValueError("a warm-up prefix is required")
        self._warm_up(prefix)
        self._refresh_annotation()

    # -- spline bookkeeping

    @property
    def spline(self):
        if self._points is None:
            return None
        return TrajectorySpline(points=np.asarray(self._points), segment_length=self.segment_length)

    def _refresh_annotation(self):
        spline = self.spline
        if spline is None:
            self._annotation = None
            return
        feats = self.pace_net.annotate(spline, mode=self.pace_mode)
        scale = 1.0
        mean_speed = float(feats[:, 2].mean())
        if mean_speed > 1e-9:
            scale = self.target_speed / mean_speed
        feats[:, 1] *= scale
        feats[:, 2] *= scale
        self._annotation = feats

    # -- control edits

    def set_target_speed(self, v):
        if v < 0:
            raise ValueError("target speed must be nonnegative")
        self.target_speed = float(v)
        self._refresh_annotation()

    def set_facing_offset(self, angle):
        self.facing_offset = float(angle)

    def extend_trajectory(self, points):
        """Append path beyond the current end; the traversed spline is immutable.

        Extensions shorter than one spline segment accumulate (returning 0 new
        segments); an edit that adds no geometric extent at all is rejected
        with PathBehindCharacter and leaves the state unchanged.
        """
        new_pts = list(_dedupe(points))
        if self._points is None:
            # no path yet, so nothing is traversed: accumulate until a chord fits
            combined = _dedupe(np.array(self._pending_start + new_pts))
            if len(combined) < 2:
                self._pending_start = [np.asarray(p) for p in combined]
                return 0
            chords, leftover = _march(combined[0], list(combined[1:]), self.segment_length)
            if not chords:
                self._pending_start = [np.asarray(p) for p in combined]
                return 0
            self._points = [np.asarray(combined[0])] + list(chords)
            self._leftover = leftover
            self._pending_start = []
            self._refresh_annotation()
            return len(chords)

        tail_end = np.asarray(self._leftover[-1], dtype=np.float64)
        progress = [p for p in new_pts if np.linalg.norm(np.asarray(p) - tail_end) > 1e-12]
        if not progress:
            raise PathBehindCharacter("extension adds no path beyond the current trajectory")
        raw = [np.asarray(p, dtype=np.float64) for p in self._leftover[1:]] + [
            np.asarray(p, dtype=np.float64) for p in new_pts
        ]
        chords, leftover = _march(self._points[-1], raw, self.segment_length)
        self._points.extend(chords)
        self._leftover = leftover
        if chords:
            self._refresh_annotation()
        return len(chords)

    # -- stepping

    def _warm_up(self, prefix):
        quats = np.asarray(prefix["rotations"], dtype=np.float64)
        controls = np.asarray(prefix["controls"], dtype=np.float64)
        trans = np.asarray(prefix["translations"], dtype=np.float64)
        if quats.shape[1] != len(self.pose_net.model_joints):
            raise IncompatibleSkeleton(
                f"prefix has {quats.shape[1]} joints, model expects {len(self.pose_net.model_joints)}"
            )
        state = self.pose_net.initial_state(1)
        with torch.no_grad():
            for t in range(len(quats) - 1):
                q = torch.as_tensor(quats[t][None])
                tr = torch.as_tensor(trans[t][None])
                ct = torch.as_tensor(controls[t + 1][None])
                _, _, _, state = self.pose_net.step(q, state, prev_translations=tr, controls=ct)
        self._state = state
        self._prev_quats = torch.as_tensor(quats[-1][None])
        self._prev_trans = torch.as_tensor(trans[-1][None])
        self._offset = float(trans[-1][1])
        self.theta = float(prefix.get("theta_end", 0.0))

    def step(self):
        spline = self.spline
        if spline is None or self.arc >= spline.total_length - 1e-9:
            raise EndOfTrajectory()
        seg = spline.segment_at(self.arc)
        facing_rel, step_freq, speed = self._annotation[seg]

        tangent = spline.tangent_at(self.arc)
        t_angle = float(np.arctan2(tangent[1], tangent[0]))
        f_angle = t_angle + facing_rel + self.facing_offset
        amp = speed
        controls = np.array(
            [tangent[0], tangent[1], np.cos(f_angle), np.sin(f_angle),
             amp * np.cos(self.theta), amp * np.sin(self.theta)]
        )
        with torch.no_grad():
            quats, _, trans, self._state = self.pose_net.step(
                self._prev_quats,
                self._state,
                prev_translations=self._prev_trans,
                controls=torch.as_tensor(controls[None]),
            )
        height = float(trans[0, 0])
        # the offset's derivative is (instantaneous - local) speed, so its
        # per-frame change cannot exceed a few times the local speed; the
        # clamp freezes the root at speed 0 and never binds during gait
        max_delta = 3.0 * speed / self.frame_rate
        offset = float(np.clip(float(trans[0, 1]), self._offset - max_delta, self._offset + max_delta))
        self._offset = offset
        self._prev_quats = quats
        self._prev_trans = torch.tensor([[height, offset]], dtype=torch.float64)

        self.arc += speed / self.frame_rate
        self.theta += 2.0 * np.pi * (step_freq / 2.0) / self.frame_rate

        s_eff = float(np.clip(self.arc + offset, 0.0, spline.total_length))
        ground = spline.point_at(s_eff)
        root = np.zeros(3)
        gx, gz = self.skeleton.ground_axes
        root[gx], root[gz] = ground
        root[self.skeleton.vertical_index] = height

        full_rot = self.pose_net.to_full_rotations(quats[0].numpy())
        positions = batched_forward_kinematics(self.skeleton, full_rot, root)
        self.frame_index += 1
        return FrameData(
            index=self.frame_index,
            timestamp=self.frame_index / self.frame_rate,
            theta=float(self.theta % (2.0 * np.pi)),
            root_position=root,
            rotations=full_rot,
            positions=positions,
        )

    def run(self, max_frames):
        frames = []
        for _ in range(max_frames):
            try:
                frames.append(self.step())
            except EndOfTrajectory:
                break
        return frames
