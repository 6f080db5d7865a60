"""The recurrent pose network and its training loop.

Two GRU layers over flattened quaternion inputs (plus optional translation
feedback and control embeddings), an output head that emits per-joint raw
quaternions around the identity, an explicit normalization layer, and either
absolute-rotation or velocity (quaternion-delta) output composition.

Training teacher-forces n conditioning frames and predicts k frames with
scheduled sampling: at every prediction step a per-episode coin with
probability p selects ground truth over the model's own fed-back output, and
p decays as beta**epoch. Gradients flow through fed-back predictions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import quat, tquat
from .losses import euler_angle_loss, positional_error_at, positional_loss, quat_norm_penalty
from .nn import (
    Adam,
    Dense,
    GruStack,
    NonFiniteLoss,
    ParamStore,
    backward,
    load_checkpoint,
    normalization_layer,
    rng_from_state,
    rng_state,
    save_checkpoint,
)
from .skeleton import batched_forward_kinematics
from .data import skeleton_from_dict, skeleton_to_dict

CONTROL_FEATURES = 6  # spline tangent versor, facing versor, A·cosθ, A·sinθ
TRANSLATION_FEATURES = 2  # root height, spline offset


class ConfigMismatch(ValueError):
    pass


class PrefixTooShort(ValueError):
    pass


@dataclass
class PoseNetConfig:
    joints: int                      # joints with rotation channels
    mode: str = "velocity"           # "velocity" or "absolute"
    hidden: int = 1000
    layers: int = 2
    include_controls: bool = False
    include_translations: bool = False
    n_condition: int = 50
    k_predict: int = 10
    control_units: int = 30
    leak: float = 0.05

    def __post_init__(self):
        if self.mode not in ("velocity", "absolute"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.n_condition <= 0 or self.k_predict <= 0:
            raise ValueError("n_condition and k_predict must be positive")


class PoseNet:
    def __init__(self, config, skeleton, seed=0):
        self.config = config
        self.skeleton = skeleton
        self.model_joints = [j for j in range(skeleton.joint_count) if not skeleton.end_site[j]]
        if config.joints != len(self.model_joints):
            raise ConfigMismatch(
                f"config.joints={config.joints} but skeleton has {len(self.model_joints)} rotating joints"
            )
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        in_size = config.joints * 4
        if config.include_translations:
            in_size += TRANSLATION_FEATURES
        if config.include_controls:
            in_size += config.control_units
            self.controls_mlp = [
                Dense(self.store, "controls.fc0", CONTROL_FEATURES, config.control_units, rng,
                      activation="leaky_relu", leak=config.leak),
                Dense(self.store, "controls.fc1", config.control_units, config.control_units, rng,
                      activation="leaky_relu", leak=config.leak),
            ]
        self.gru = GruStack(self.store, "gru", in_size, config.hidden, config.layers, rng)
        self.rot_head = Dense(self.store, "head.rot", config.hidden, config.joints * 4, rng)
        if config.include_translations:
            self.trans_head = Dense(self.store, "head.trans", config.hidden, TRANSLATION_FEATURES, rng)
        self._identity_offset = torch.zeros(config.joints * 4, dtype=torch.float64)
        self._identity_offset[0::4] = 1.0

    def initial_state(self, batch):
        return self.gru.initial_state(batch)

    def step(self, prev_rotations, state, prev_translations=None, controls=None):
        """One recurrent step.

        prev_rotations: (B, J, 4) unit; returns (next rotations (B, J, 4),
        raw pre-normalization quaternions, translations or None, new state).
        A zeroed output head emits exactly the identity quaternion per joint
        (the raw output is offset by the unit-w quaternion), which in velocity
        mode makes the next pose equal the previous one.
        """
        cfg = self.config
        b = prev_rotations.shape[0]
        parts = [prev_rotations.reshape(b, cfg.joints * 4)]
        if cfg.include_translations:
            if prev_translations is None:
                raise ConfigMismatch("model expects previous translations")
            parts.append(prev_translations)
        elif prev_translations is not None:
            raise ConfigMismatch("model was built without translations")
        if cfg.include_controls:
            if controls is None:
                raise ConfigMismatch("model expects control features")
            emb = controls
            for layer in self.controls_mlp:
                emb = layer(emb)
            parts.append(emb)
        elif controls is not None:
            raise ConfigMismatch("model was built without controls")
        x = torch.cat(parts, dim=-1)
        h, new_state = self.gru.step(x, state)
        raw = (self.rot_head(h) + self._identity_offset).reshape(b, cfg.joints, 4)
        unit, raw = normalization_layer(raw)
        if cfg.mode == "velocity":
            out = tquat.qmul(prev_rotations, unit)
        else:
            out = unit
        trans = self.trans_head(h) if cfg.include_translations else None
        return out, raw, trans, new_state

    def to_full_rotations(self, model_rotations):
        """Expand (…, joints, 4) model outputs to all skeleton joints,
        identity quaternions on end sites."""
        if isinstance(model_rotations, torch.Tensor):
            lead = model_rotations.shape[:-2]
            full = torch.zeros(lead + (self.skeleton.joint_count, 4), dtype=model_rotations.dtype)
            full[..., 0] = 1.0
            full[..., self.model_joints, :] = model_rotations
            return full
        lead = model_rotations.shape[:-2]
        full = np.zeros(lead + (self.skeleton.joint_count, 4))
        full[..., 0] = 1.0
        full[..., self.model_joints, :] = model_rotations
        return full

    def model_euler_orders(self):
        return [self.skeleton.euler_orders[j] for j in self.model_joints]


# ---------------------------------------------------------------------------
# training data preparation


def prepare_clip_arrays(skeleton, clips, *, with_root=False, locomotion=None):
    """Per-clip training arrays.

    Rotation-only mode (with_root=False): target FK positions are computed
    with the root pinned at the origin, so the metric measures pose shape.
    When `locomotion` dicts (from gait.locomotion_features) are passed, the
    controls/translations streams and the average-speed ground positions are
    attached and targets use the true roots.
    """
    model_joints = [j for j in range(skeleton.joint_count) if not skeleton.end_site[j]]
    out = []
    for i, clip in enumerate(clips):
        roots = clip.root_positions if with_root else None
        targets = batched_forward_kinematics(skeleton, clip.rotations, roots)
        entry = {
            "rotations": clip.rotations[:, model_joints],
            "target_positions": targets,
            "frame_rate": clip.frame_rate,
            "controls": None,
            "translations": None,
            "base_ground": None,
            "tangents": None,
        }
        if locomotion is not None:
            feats = locomotion[i]
            entry["controls"] = feats["controls"]
            entry["translations"] = feats["translations"]
            entry["base_ground"] = feats["base_ground"]
            entry["tangents"] = feats["tangents"]
        out.append(entry)
    return out


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    lr: float = 1e-3
    lr_decay: float = 0.999
    clip_norm: float = 0.1
    beta: float = 0.995
    loss: str = "positional"   # "positional" or "euler"
    lam: float = 0.01
    sampling: str = "scheduled"  # "scheduled" | "teacher_forcing" | "self_feed"
    num_threads: int = 1


@dataclass
class TrainResult:
    history: list = field(default_factory=list)       # mean loss per epoch
    grad_norms: list = field(default_factory=list)    # pre-clip norm per optimizer step
    p_values: list = field(default_factory=list)      # scheduled-sampling p per epoch
    raw_norm_means: list = field(default_factory=list)  # mean |raw quat norm - 1| per epoch
    epochs_done: int = 0


def scheduled_sampling_p(beta, epoch):
    return beta ** epoch


def _episode_index(clips_data, window):
    starts = []
    for ci, entry in enumerate(clips_data):
        t = len(entry["rotations"])
        n_starts = t - window + 1
        if n_starts > 0:
            starts.append((ci, n_starts))
    if not starts:
        raise ValueError(f"no clip is long enough for a {window}-frame episode")
    return starts


def _sample_episodes(starts, count, rng):
    weights = np.array([n for _, n in starts], dtype=np.float64)
    weights /= weights.sum()
    episodes = []
    for _ in range(count):
        ci = int(rng.choice(len(starts), p=weights))
        clip_index, n_starts = starts[ci]
        episodes.append((clip_index, int(rng.integers(0, n_starts))))
    return episodes


def _gather(clips_data, episodes, key, window):
    rows = [clips_data[ci][key][s : s + window] for ci, s in episodes]
    return torch.as_tensor(np.stack(rows))


def train_pose_net(net, skeleton, clips_data, config, *, optimizer=None, rng=None, start_epoch=0):
    """Scheduled-sampling training; returns TrainResult.

    Passing optimizer/rng/start_epoch resumes a run: with state restored from
    a checkpoint the continuation reproduces an uninterrupted run exactly.
    """
    torch.set_num_threads(max(1, config.num_threads))
    cfg = net.config
    n, k = cfg.n_condition, cfg.k_predict
    window = n + k
    starts = _episode_index(clips_data, window)
    episodes_per_epoch = len(clips_data)
    if optimizer is None:
        optimizer = Adam(net.store, lr=config.lr, clip_norm=config.clip_norm, lr_decay=config.lr_decay)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    use_euler = config.loss == "euler"
    if use_euler:
        orders = net.model_euler_orders()
        for entry in clips_data:
            if "target_eulers" not in entry:
                from .losses import _quats_to_euler

                entry["target_eulers"] = np.asarray(_quats_to_euler(entry["rotations"], orders))

    result = TrainResult()
    for epoch in range(start_epoch, start_epoch + config.epochs):
        if config.sampling == "teacher_forcing":
            p = 1.0
        elif config.sampling == "self_feed":
            p = 0.0
        else:
            p = scheduled_sampling_p(config.beta, epoch)
        result.p_values.append(p)

        episodes = _sample_episodes(starts, episodes_per_epoch, rng)
        epoch_losses = []
        epoch_rawdev = []
        for b0 in range(0, len(episodes), config.batch_size):
            batch = episodes[b0 : b0 + config.batch_size]
            loss, rawdev, pre_norm = _train_step(
                net, skeleton, clips_data, batch, p, config, optimizer, rng, epoch, window
            )
            result.grad_norms.append(pre_norm)
            epoch_losses.append(loss)
            epoch_rawdev.append(rawdev)
        result.history.append(float(np.mean(epoch_losses)))
        result.raw_norm_means.append(float(np.mean(epoch_rawdev)))
        result.epochs_done = epoch + 1
    return result


def _train_step(net, skeleton, clips_data, batch, p, config, optimizer, rng, epoch, window):
    cfg = net.config
    n, k = cfg.n_condition, cfg.k_predict
    b = len(batch)
    gt_quats = _gather(clips_data, batch, "rotations", window)
    has_controls = cfg.include_controls
    has_trans = cfg.include_translations
    gt_controls = _gather(clips_data, batch, "controls", window) if has_controls else None
    gt_trans = _gather(clips_data, batch, "translations", window) if has_trans else None

    state = net.initial_state(b)
    # teacher-forced warm-up over the first n-1 inputs
    for t in range(n - 1):
        _, _, _, state = net.step(
            gt_quats[:, t],
            state,
            prev_translations=gt_trans[:, t] if has_trans else None,
            controls=gt_controls[:, t + 1] if has_controls else None,
        )

    preds, raws, trans_preds = [], [], []
    prev_q = gt_quats[:, n - 1]
    prev_tr = gt_trans[:, n - 1] if has_trans else None
    for i in range(k):
        t = n - 1 + i
        if i > 0:
            feed_gt = torch.as_tensor(rng.random(b) < p)
            prev_q = torch.where(feed_gt[:, None, None], gt_quats[:, t], prev_q)
            if has_trans:
                prev_tr = torch.where(feed_gt[:, None], gt_trans[:, t], prev_tr)
        out_q, raw, out_tr, state = net.step(
            prev_q,
            state,
            prev_translations=prev_tr,
            controls=gt_controls[:, t + 1] if has_controls else None,
        )
        preds.append(out_q)
        raws.append(raw)
        if has_trans:
            trans_preds.append(out_tr)
        prev_q = out_q
        prev_tr = out_tr if has_trans else None

    pred_q = torch.stack(preds, dim=1)            # (B, k, J, 4)
    raw_q = torch.stack(raws, dim=1)
    target_slice = slice(n, n + k)

    penalty = quat_norm_penalty(raw_q, config.lam)
    if config.loss == "euler":
        target_eulers = _gather(clips_data, batch, "target_eulers", window)[:, target_slice]
        main = euler_angle_loss(pred_q, target_eulers, net.model_euler_orders())
        if has_trans:
            trans_pred = torch.stack(trans_preds, dim=1)
            main = main + (trans_pred - gt_trans[:, target_slice]).abs().mean()
    else:
        targets = _gather(clips_data, batch, "target_positions", window)[:, target_slice]
        full = net.to_full_rotations(pred_q)
        roots = None
        if has_trans:
            trans_pred = torch.stack(trans_preds, dim=1)  # (B, k, 2)
            base = _gather(clips_data, batch, "base_ground", window)[:, target_slice]
            tang = _gather(clips_data, batch, "tangents", window)[:, target_slice]
            ground = base + trans_pred[..., 1:2] * tang
            roots = torch.zeros(ground.shape[:-1] + (3,), dtype=torch.float64)
            gx, gz = skeleton.ground_axes
            roots[..., gx] = ground[..., 0]
            roots[..., gz] = ground[..., 1]
            roots[..., skeleton.vertical_index] = trans_pred[..., 0]
        main = positional_loss(skeleton, full, roots, targets)
    loss = main + penalty

    if not torch.isfinite(loss):
        raise NonFiniteLoss(
            f"non-finite loss at epoch {epoch} on episodes {batch} (p={p:.4f})"
        )
    net.store.zero_grad()
    backward(loss)
    pre_norm = optimizer.step(epoch)
    rawdev = float((torch.linalg.vector_norm(raw_q.detach(), dim=-1) - 1.0).abs().mean())
    return float(loss.detach()), rawdev, pre_norm


# ---------------------------------------------------------------------------
# inference


def predict(net, prefix_rotations, horizon):
    """Warm the state on the prefix, then free-run `horizon` steps.

    Rotation-only models; returns (horizon, joints, 4) numpy.
    """
    if net.config.include_controls or net.config.include_translations:
        raise ConfigMismatch("predict() is for rotation-only models; use LocomotionSession")
    prefix = np.asarray(prefix_rotations, dtype=np.float64)
    if len(prefix) < net.config.n_condition:
        raise PrefixTooShort(f"prefix has {len(prefix)} frames, need {net.config.n_condition}")
    if horizon == 0:
        return np.zeros((0, net.config.joints, 4))
    with torch.no_grad():
        state = net.initial_state(1)
        for t in range(len(prefix) - 1):
            _, _, _, state = net.step(torch.as_tensor(prefix[t][None]), state)
        prev = torch.as_tensor(prefix[-1][None])
        out = []
        for _ in range(horizon):
            prev, _, _, state = net.step(prev, state)
            out.append(prev[0].numpy())
    return np.stack(out)


def baseline_predict(kind, prefix_rotations, horizon, euler_orders="zyx"):
    """Non-learned baselines: zero_velocity, run_avg2, run_avg4.

    Running averages are taken per joint in Euler space with angles unwrapped
    over the averaged frames.
    """
    prefix = np.asarray(prefix_rotations, dtype=np.float64)
    if kind == "zero_velocity":
        need = 1
    elif kind in ("run_avg2", "run_avg4"):
        need = int(kind[-1])
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    if len(prefix) < need:
        raise PrefixTooShort(f"baseline {kind} needs {need} frames, got {len(prefix)}")
    if kind == "zero_velocity":
        frame = prefix[-1]
    else:
        joints = prefix.shape[1]
        if isinstance(euler_orders, str):
            euler_orders = [euler_orders] * joints
        frame = np.zeros((joints, 4))
        for j in range(joints):
            eul = quat.quat_to_euler(prefix[-need:, j], euler_orders[j])
            eul = np.unwrap(eul, axis=0)
            frame[j] = quat.euler_to_quat(eul.mean(axis=0), euler_orders[j])
    return np.tile(frame, (horizon, 1, 1))


def sample_eval_sequences(clips_data, n, horizon, count, rng):
    """Seeded (clip, start) pairs with room for the prefix and the horizon."""
    starts = _episode_index(clips_data, n + horizon)
    return _sample_episodes(starts, count, rng)


def teacher_forced_errors(net, skeleton, clips_data, sequences):
    """Held-out k-step prediction errors with ground-truth inputs at every step.

    This mirrors how the training objective sees the model (the per-epoch
    curves of the loss-comparison experiment); free-running drift is measured
    separately by predict(). Returns (mean angle distance, mean FK position
    error) over the k prediction steps of each sequence.
    """
    from .losses import mean_angle_distance

    n, k = net.config.n_condition, net.config.k_predict
    window = n + k
    gt = torch.as_tensor(np.stack([clips_data[ci]["rotations"][s : s + window] for ci, s in sequences]))
    b = len(sequences)
    state = net.initial_state(b)
    preds = []
    with torch.no_grad():
        for t in range(window - 1):
            out, _, _, state = net.step(gt[:, t], state)
            if t >= n - 1:
                preds.append(out)
    pred = torch.stack(preds, dim=1).numpy()
    target = gt[:, n:].numpy()
    angle = mean_angle_distance(pred, target)
    pos = float(
        positional_error_at(
            skeleton, net.to_full_rotations(pred), net.to_full_rotations(target), list(range(1, k + 1))
        ).mean()
    )
    return angle, pos


def collect_predictions(predict_fn, clips_data, sequences, n, horizon):
    """Run a predictor over evaluation sequences.

    predict_fn(prefix (n, J, 4)) -> (horizon, J, 4). Returns (pred, target)
    arrays of shape (S, horizon, J, 4).
    """
    preds, targets = [], []
    for ci, s in sequences:
        rot = clips_data[ci]["rotations"]
        prefix = rot[s : s + n]
        preds.append(predict_fn(prefix))
        targets.append(rot[s + n : s + n + horizon])
    return np.stack(preds), np.stack(targets)


# ---------------------------------------------------------------------------
# checkpoints


def save_pose_checkpoint(path, net, *, optimizer=None, epoch=0, p=1.0, rng=None,
                         train_config=None, extras=None, extra_tensors=None):
    header = {
        "kind": "pose",
        "config": asdict(net.config),
        "skeleton": skeleton_to_dict(net.skeleton),
        "epoch": int(epoch),
        "p": float(p),
        "adam_t": optimizer.t if optimizer else 0,
        "lr": optimizer.lr if optimizer else None,
        "lr_decay": optimizer.lr_decay if optimizer else None,
        "clip_norm": optimizer.clip_norm if optimizer else None,
        "rng": rng_state(rng) if rng is not None else None,
        "train_config": asdict(train_config) if train_config else None,
        "extras": extras or {},
    }
    tensors = net.store.to_arrays()
    if optimizer is not None:
        tensors.update(optimizer.state_arrays())
    for name, arr in (extra_tensors or {}).items():
        tensors[f"extra.{name}"] = np.asarray(arr, dtype=np.float64)
    save_checkpoint(path, header, tensors)


def load_pose_checkpoint(path, with_optimizer=False):
    header, tensors = load_checkpoint(path)
    if header.get("kind") != "pose":
        raise ValueError(f"{path} is not a pose checkpoint")
    skeleton = skeleton_from_dict(header["skeleton"])
    net = PoseNet(PoseNetConfig(**header["config"]), skeleton, seed=0)
    net.store.load_values(tensors)
    extra = {
        name[len("extra."):]: value for name, value in tensors.items() if name.startswith("extra.")
    }
    out = {"net": net, "skeleton": skeleton, "header": header, "extra": extra}
    if with_optimizer:
        opt = Adam(
            net.store,
            lr=header["lr"],
            clip_norm=header["clip_norm"],
            lr_decay=header["lr_decay"],
        )
        opt.load_state(tensors, header["adam_t"])
        out["optimizer"] = opt
        out["rng"] = rng_from_state(header["rng"]) if header.get("rng") else None
    return out
