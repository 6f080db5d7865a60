"""Benchmark pipelines behind the CLI: dataset preparation, training runs,
short-term evaluation tables, the loss-comparison experiment, long-term
generation to files, and dataset statistics."""

from __future__ import annotations

import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import quat
from .bvh import parse_bvh, write_bvh
from .config import get_bool, get_float, get_int, get_str
from .data import (
    ClipRecord,
    DatasetManifest,
    MissingData,
    SyntheticSpec,
    augment_rotation,
    build_manifest,
    downsample,
    load_cache,
    make_synthetic_dataset,
    parse_expmap_text,
    save_cache,
    validate_ingested_clip,
)
from .gait import (
    InsufficientContacts,
    LocomotionSession,
    PaceConfig,
    PaceNet,
    compute_gait_features,
    detect_foot_contacts,
    extract_root_trajectory,
    fit_spline,
    load_pace_checkpoint,
    locomotion_features,
    save_pace_checkpoint,
    segment_annotations,
    train_pace_net,
)
from .losses import evaluation_angle_error
from .nn import NonFiniteLoss
from .posenet import (
    PoseNet,
    PoseNetConfig,
    TrainConfig,
    baseline_predict,
    collect_predictions,
    load_pose_checkpoint,
    predict,
    prepare_clip_arrays,
    sample_eval_sequences,
    save_pose_checkpoint,
    teacher_forced_errors,
    train_pose_net,
)
from .skeleton import mirror_clip


class MissingCheckpoint(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# prepare


def prepare_synthetic(out_dir, preset="biped", seed=7, clips=12, frames=300,
                      frame_rate=25.0, freq_band=(0.8, 1.2), joints=4, test_fraction=0.25,
                      amp_band=(0.3, 0.8), distal_noise=0.0, upper_motion=0.0):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(preset=preset, joints=joints, clips=clips, frames=frames,
                         frame_rate=frame_rate, freq_band=tuple(freq_band),
                         amp_band=tuple(amp_band), distal_noise=distal_noise,
                         upper_motion=upper_motion)
    skeleton, data_clips = make_synthetic_dataset(spec, seed)
    n_test = max(1, int(round(clips * test_fraction)))
    manifest = DatasetManifest(
        protocol="synthetic",
        seed=seed,
        cache="dataset.qnds",
        preprocess={"preset": preset, "frames": str(frames), "frame_rate": str(frame_rate)},
    )
    for i, clip in enumerate(data_clips):
        split = "test" if i >= clips - n_test else "train"
        manifest.clips.append(ClipRecord(f"synthetic:{i}", clip.subject, clip.action, split))
    save_cache(out / "dataset.qnds", skeleton, data_clips, meta={"protocol": "synthetic", "seed": seed})
    (out / "manifest.txt").write_text(manifest.to_text())
    return manifest, skeleton, data_clips


def prepare_real(data_root, protocol, out_dir, seed=0, test_subject=None, overrides_path=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kwargs = {"seed": seed}
    if test_subject:
        kwargs["test_subject"] = test_subject
    manifest = build_manifest(data_root, protocol, **kwargs)
    root = Path(data_root)
    skeleton = None
    processed = []
    records = []
    for rec in manifest.clips:
        path = root / rec.source
        if not path.exists():
            raise MissingData([path])
        if protocol == "h36m_short_term":
            clip = parse_expmap_text(path.read_text())
            clip = replace(clip, subject=rec.subject, action=rec.action)
            phases = (0, 1) if rec.split == "train" else (0,)
            for phase in phases:
                processed.append(validate_ingested_clip(downsample(clip, 2, phase)))
                records.append(ClipRecord(f"{rec.source}#p{phase}", rec.subject, rec.action, rec.split))
        else:
            skel, clip = parse_bvh(path.read_text())
            if skeleton is None:
                skeleton = skel
            elif skel.names != skeleton.names:
                raise MissingData([f"{path} (skeleton differs from {manifest.clips[0].source})"])
            clip = replace(clip, subject=rec.subject, action=rec.action)
            keep = max(1, int(round(clip.frame_rate / 30.0)))
            for phase in range(keep):
                down = downsample(clip, keep, phase)
                processed.append(validate_ingested_clip(down))
                records.append(ClipRecord(f"{rec.source}#p{phase}", rec.subject, rec.action, rec.split))
    if protocol == "h36m_short_term":
        # the distribution format carries no offsets; evaluation is angle-based
        joints = processed[0].joints
        from .skeleton import Skeleton

        skeleton = Skeleton(
            names=tuple(f"joint{i}" for i in range(joints)),
            parents=tuple([-1] + list(range(joints - 1))),
            offsets=np.zeros((joints, 3)),
        )
    if overrides_path:
        from .skeleton import infer_mirror_map, load_skeleton_overrides

        mirror, orders = load_skeleton_overrides(Path(overrides_path).read_text())
        if orders:
            euler_orders = [orders.get(n, o) for n, o in zip(skeleton.names, skeleton.euler_orders)]
            skeleton = skeleton.with_euler_orders(euler_orders)
        skeleton = skeleton.with_mirror_map(infer_mirror_map(skeleton.names, overrides=mirror))
    manifest.clips = records
    save_cache(out / "dataset.qnds", skeleton, processed, meta={"protocol": protocol, "seed": seed})
    (out / "manifest.txt").write_text(manifest.to_text())
    return manifest, skeleton, processed


def load_prepared(manifest_path):
    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.from_text(manifest_path.read_text())
    skeleton, clips, meta = load_cache(manifest_path.parent / manifest.cache)
    return manifest, skeleton, clips, meta


def split_clips(manifest, clips, split):
    return [clips[i] for i in manifest.split_indices(split)]


# ---------------------------------------------------------------------------
# training commands


def _augment_locomotion(skeleton, clips, rng, mirror=True, yaw_copies=2):
    out = list(clips)
    if mirror and all(m is not None for m in skeleton.mirror_map):
        out = out + [mirror_clip(skeleton, c) for c in out]
    base = list(out)
    for _ in range(yaw_copies):
        out.extend(augment_rotation(c, float(rng.uniform(-np.pi, np.pi))) for c in base)
    return out


def train_pose_command(manifest_path, out_path, overrides=None, progress=None):
    cfg = overrides or {}
    manifest, skeleton, clips, _ = load_prepared(manifest_path)
    train_clips = split_clips(manifest, clips, "train")
    if not train_clips:
        raise MissingData(["no train clips in manifest"])
    frame_rate = train_clips[0].frame_rate

    task = get_str(cfg, "task", "shortterm")
    seed = get_int(cfg, "seed", 0)
    model_joints = sum(1 for e in skeleton.end_site if not e)
    net_config = PoseNetConfig(
        joints=model_joints,
        mode=get_str(cfg, "mode", "velocity"),
        hidden=get_int(cfg, "hidden", 1000),
        layers=get_int(cfg, "layers", 2),
        include_controls=task == "locomotion",
        include_translations=task == "locomotion",
        n_condition=get_int(cfg, "n", 50),
        k_predict=get_int(cfg, "k", 10),
    )
    train_config = TrainConfig(
        epochs=get_int(cfg, "epochs", 100),
        batch_size=get_int(cfg, "batch", 8),
        seed=seed,
        lr=get_float(cfg, "lr", 1e-3),
        lr_decay=get_float(cfg, "lr_decay", 0.999),
        clip_norm=get_float(cfg, "clip_norm", 0.1),
        beta=get_float(cfg, "beta", 0.995),
        loss=get_str(cfg, "loss", "positional"),
        lam=get_float(cfg, "lam", 0.01),
        sampling=get_str(cfg, "sampling", "scheduled"),
    )

    rng = np.random.default_rng(seed)
    extras = {"task": task, "frame_rate": frame_rate}
    extra_tensors = {}
    if task == "locomotion":
        aug = _augment_locomotion(
            skeleton, train_clips, rng,
            mirror=get_bool(cfg, "mirror", True),
            yaw_copies=get_int(cfg, "yaw_copies", 2),
        )
        lowpass = get_int(cfg, "lowpass_window", 31)
        loco = [locomotion_features(skeleton, c, lowpass_window=lowpass) for c in aug]
        clips_data = prepare_clip_arrays(skeleton, aug, with_root=True, locomotion=loco)
        n = net_config.n_condition
        first = loco[0]
        extra_tensors = {
            "prefix_rotations": aug[0].rotations[:n, [j for j in range(skeleton.joint_count) if not skeleton.end_site[j]]],
            "prefix_controls": first["controls"][:n],
            "prefix_translations": first["translations"][:n],
        }
        extras["prefix_theta_end"] = float(first["features"].theta[n - 1])
        extras["lowpass_window"] = lowpass
    else:
        clips_data = prepare_clip_arrays(skeleton, train_clips)

    net = PoseNet(net_config, skeleton, seed=seed)
    t0 = time.time()
    from .nn import Adam

    optimizer = Adam(net.store, lr=train_config.lr, clip_norm=train_config.clip_norm,
                     lr_decay=train_config.lr_decay)
    result = train_pose_net(net, skeleton, clips_data, train_config, optimizer=optimizer, rng=rng)
    extras["wall_clock_s"] = round(time.time() - t0, 3)
    extras["final_loss"] = result.history[-1] if result.history else None

    save_pose_checkpoint(
        Path(out_path), net,
        optimizer=optimizer,
        epoch=result.epochs_done,
        p=result.p_values[-1] if result.p_values else 1.0,
        rng=rng,
        train_config=train_config,
        extras=extras,
        extra_tensors=extra_tensors,
    )
    return result


def train_pace_command(manifest_path, out_path, overrides=None):
    cfg = overrides or {}
    manifest, skeleton, clips, _ = load_prepared(manifest_path)
    train_clips = split_clips(manifest, clips, "train")
    if not train_clips:
        raise MissingData(["no train clips in manifest"])
    seed = get_int(cfg, "seed", 0)
    lowpass = get_int(cfg, "lowpass_window", 31)

    feats_per_clip = []
    for clip in train_clips:
        feats_per_clip.append(locomotion_features(skeleton, clip, lowpass_window=lowpass))
    mean_speed = float(np.mean([f["features"].local_speed.mean() for f in feats_per_clip]))
    segment_length = get_float(cfg, "segment_length", mean_speed / 6.0)

    # fixed-length chunks batch together across clips, which keeps the
    # segment recursion vectorized
    chunk = get_int(cfg, "chunk", 24)
    dataset = []
    for clip, f in zip(train_clips, feats_per_clip):
        spline = fit_spline(f["trajectory"], segment_length)
        ann = segment_annotations(spline, f["features"])
        curv = spline.curvature
        for start in range(0, len(curv), chunk):
            piece = slice(start, start + chunk)
            if len(curv[piece]) == chunk:
                dataset.append((curv[piece], ann[piece]))
        if len(curv) >= chunk and len(curv) % chunk:
            dataset.append((curv[-chunk:], ann[-chunk:]))
        elif len(curv) < chunk:
            dataset.append((curv, ann))

    pace = PaceNet(PaceConfig(hidden=get_int(cfg, "hidden", 30), delay=get_int(cfg, "delay", 4)), seed=seed)
    history = train_pace_net(
        pace, dataset,
        epochs=get_int(cfg, "epochs", 300),
        seed=seed,
        lr=get_float(cfg, "lr", 0.02),
        mode=get_str(cfg, "pace_mode", "both"),
    )
    save_pace_checkpoint(
        Path(out_path), pace,
        extras={
            "segment_length": segment_length,
            "mean_speed": mean_speed,
            "lowpass_window": lowpass,
            "frame_rate": train_clips[0].frame_rate,
            "final_loss": history[-1] if history else None,
        },
    )
    return history


# ---------------------------------------------------------------------------
# short-term evaluation


HORIZON_FRAMES = (2, 4, 8, 10)


def eval_short_term(manifest_path, *, checkpoint=None, baseline=None, seed=0,
                    sequences_per_action=8, n_condition=None, out_prefix=None):
    if checkpoint is None and baseline is None:
        raise MissingCheckpoint("need a pose checkpoint or a --baseline name")
    manifest, skeleton, clips, _ = load_prepared(manifest_path)
    test_clips = split_clips(manifest, clips, "test")
    if not test_clips:
        raise MissingData(["no test clips in manifest"])
    frame_rate = test_clips[0].frame_rate
    horizons_ms = [int(round(h / frame_rate * 1000)) for h in HORIZON_FRAMES]

    net = None
    if checkpoint is not None:
        loaded = load_pose_checkpoint(checkpoint)
        net = loaded["net"]
        n = net.config.n_condition
        label = f"model:{Path(checkpoint).name}"
    else:
        n = n_condition or 50
        label = f"baseline:{baseline}"
    model_joints = [j for j in range(skeleton.joint_count) if not skeleton.end_site[j]]
    orders = [skeleton.euler_orders[j] for j in model_joints]

    by_action = {}
    for clip in test_clips:
        by_action.setdefault(clip.action, []).append(clip)

    rng = np.random.default_rng(seed)
    rows = []
    horizon = max(HORIZON_FRAMES)
    for action in sorted(by_action):
        data = prepare_clip_arrays(skeleton, by_action[action])
        seqs = sample_eval_sequences(data, n, horizon, sequences_per_action, rng)
        if net is not None:
            predict_fn = lambda p: predict(net, p, horizon)
        else:
            predict_fn = lambda p: baseline_predict(baseline, p, horizon, orders)
        pred, target = collect_predictions(predict_fn, data, seqs, n, horizon)
        from .losses import _quats_to_euler

        target_eulers = np.asarray(_quats_to_euler(target, orders))
        errors = evaluation_angle_error(pred, target_eulers, orders, horizons=HORIZON_FRAMES)
        rows.append((action, errors))

    table = _format_table(label, horizons_ms, rows)
    csv_lines = ["predictor,action,horizon_ms,error"]
    for action, errors in rows:
        for ms, err in zip(horizons_ms, errors):
            csv_lines.append(f"{label},{action},{ms},{err:.17g}")
    csv_text = "\n".join(csv_lines) + "\n"
    if out_prefix is not None:
        Path(str(out_prefix) + ".txt").write_text(table)
        Path(str(out_prefix) + ".csv").write_text(csv_text)
    return {"label": label, "horizons_ms": horizons_ms, "rows": rows, "table": table, "csv": csv_text}


def _format_table(label, horizons_ms, rows):
    lines = []
    header = "milliseconds".ljust(24) + "".join(f"{ms:>8d}" for ms in horizons_ms)
    for action, errors in rows:
        lines.append(action)
        lines.append(header)
        lines.append(label[:24].ljust(24) + "".join(f"{e:8.2f}" for e in errors))
        lines.append("")
    return "\n".join(lines)


def parse_report_csv(text):
    rows = {}
    lines = text.strip().splitlines()
    for line in lines[1:]:
        label, action, ms, err = line.split(",")
        rows[(label, action, int(ms))] = float(err)
    return rows


# ---------------------------------------------------------------------------
# loss comparison (angle vs positional training objective)


def loss_compare(manifest_path, out_dir, overrides=None):
    cfg = overrides or {}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest, skeleton, clips, _ = load_prepared(manifest_path)
    train_clips = split_clips(manifest, clips, "train")
    test_clips = split_clips(manifest, clips, "test") or train_clips

    seed = get_int(cfg, "seed", 0)
    epochs = get_int(cfg, "epochs", 100)
    n = get_int(cfg, "n", 60)
    k = get_int(cfg, "k", 30)
    model_joints = sum(1 for e in skeleton.end_site if not e)

    train_data = prepare_clip_arrays(skeleton, train_clips)
    test_data = prepare_clip_arrays(skeleton, test_clips)
    eval_rng = np.random.default_rng(seed + 1)
    seqs = sample_eval_sequences(test_data, n, k, get_int(cfg, "eval_sequences", 8), eval_rng)

    curves = ["epoch,arm,train_loss,angle_metric,position_metric"]
    results = {}
    for arm, loss_name in (("angle", "euler"), ("position", "positional")):
        net = PoseNet(
            PoseNetConfig(joints=model_joints, mode=get_str(cfg, "mode", "velocity"),
                          hidden=get_int(cfg, "hidden", 64), layers=get_int(cfg, "layers", 2),
                          n_condition=n, k_predict=k),
            skeleton, seed=seed,
        )
        tc = TrainConfig(
            epochs=1, batch_size=get_int(cfg, "batch", 8), seed=seed,
            lr=get_float(cfg, "lr", 1e-3), lr_decay=get_float(cfg, "lr_decay", 0.999),
            clip_norm=get_float(cfg, "clip_norm", 0.1), loss=loss_name,
            lam=get_float(cfg, "lam", 0.01), beta=get_float(cfg, "beta", 0.995),
        )
        from .nn import Adam

        optimizer = Adam(net.store, lr=tc.lr, clip_norm=tc.clip_norm, lr_decay=tc.lr_decay)
        rng = np.random.default_rng(seed)
        grad_log = []
        history = []
        aborted = None
        for epoch in range(epochs):
            try:
                res = train_pose_net(net, skeleton, train_data, tc,
                                     optimizer=optimizer, rng=rng, start_epoch=epoch)
            except NonFiniteLoss as err:
                aborted = f"epoch {epoch}: {err}"
                break
            grad_log.extend(res.grad_norms)
            history.extend(res.history)
            # held-out k-step errors under the training protocol's inputs
            angle_metric, pos_metric = teacher_forced_errors(net, skeleton, test_data, seqs)
            curves.append(f"{epoch},{arm},{res.history[-1]:.17g},{angle_metric:.17g},{pos_metric:.17g}")
        (out / f"gradnorm_{arm}.csv").write_text(
            "step,pre_clip_norm\n" + "\n".join(f"{i},{g:.17g}" for i, g in enumerate(grad_log)) + "\n"
        )
        results[arm] = {
            "final_angle_metric": angle_metric if history else float("nan"),
            "final_position_metric": pos_metric if history else float("nan"),
            "grad_norms": grad_log,
            "aborted": aborted,
        }
    (out / "curves.csv").write_text("\n".join(curves) + "\n")
    return results


# ---------------------------------------------------------------------------
# generation


def read_trajectory_file(path):
    pts = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'x y', got {raw!r}")
        pts.append([float(parts[0]), float(parts[1])])
    return np.array(pts)


def write_trajectory_file(path, points):
    Path(path).write_text("\n".join(f"{x:.10g} {y:.10g}" for x, y in points) + "\n")


def generate_command(trajectory_path, target_speed, pose_ckpt, pace_ckpt, out_prefix,
                     seed=0, pace_mode="bidirectional", max_seconds=120.0):
    points = read_trajectory_file(trajectory_path)
    loaded = load_pose_checkpoint(pose_ckpt)
    net, skeleton, header = loaded["net"], loaded["skeleton"], loaded["header"]
    if header["extras"].get("task") != "locomotion":
        raise ValueError("pose checkpoint was not trained for locomotion (no controls/translations)")
    pace, pace_header = load_pace_checkpoint(pace_ckpt)
    frame_rate = float(header["extras"]["frame_rate"])
    segment_length = float(pace_header["extras"]["segment_length"])

    prefix = {
        "rotations": loaded["extra"]["prefix_rotations"],
        "controls": loaded["extra"]["prefix_controls"],
        "translations": loaded["extra"]["prefix_translations"],
        "theta_end": header["extras"].get("prefix_theta_end", 0.0),
    }
    session = LocomotionSession(
        skeleton, net, pace, points,
        target_speed=target_speed, frame_rate=frame_rate,
        segment_length=segment_length, prefix=prefix, pace_mode=pace_mode,
    )
    frames = session.run(max_frames=int(max_seconds * frame_rate))

    from .skeleton import MotionClip

    clip = MotionClip(
        frame_rate=frame_rate,
        root_positions=np.stack([f.root_position for f in frames]),
        rotations=np.stack([f.rotations for f in frames]),
        subject="generated",
        action="locomotion",
    )
    bvh_path = Path(str(out_prefix) + ".bvh")
    bvh_path.write_text(write_bvh(skeleton, clip))

    csv_path = Path(str(out_prefix) + "_positions.csv")
    header_cols = ["frame", "time", "theta"]
    for name in skeleton.names:
        header_cols += [f"{name}_x", f"{name}_y", f"{name}_z"]
    lines = [",".join(header_cols)]
    for f in frames:
        cells = [str(f.index), f"{f.timestamp:.10g}", f"{f.theta:.10g}"]
        cells += [f"{v:.10g}" for v in f.positions.reshape(-1)]
        lines.append(",".join(cells))
    csv_path.write_text("\n".join(lines) + "\n")
    return {"frames": frames, "clip": clip, "session": session,
            "bvh": bvh_path, "csv": csv_path, "spline": session.spline}


# ---------------------------------------------------------------------------
# statistics


def dataset_stats(manifest_path, out_dir, feet=("LeftFoot", "RightFoot"), bins=64):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest, skeleton, clips, _ = load_prepared(manifest_path)
    model_joints = [j for j in range(skeleton.joint_count) if not skeleton.end_site[j]]

    per_axis = {"x": [], "y": [], "z": []}
    for clip in clips:
        for j in model_joints:
            order = skeleton.euler_orders[j]
            eul = quat.quat_to_euler(clip.rotations[:, j], order)
            for pos, axis in enumerate(order):
                per_axis[axis].append(eul[:, pos])
    edges = np.linspace(-np.pi, np.pi, bins + 1)
    hist_lines = ["axis,bin_low,bin_high,count"]
    frac_lines = ["axis,fraction_outside_safe_range"]
    fractions = {}
    all_angles = []
    for axis in "xyz":
        if not per_axis[axis]:
            continue
        angles = np.concatenate(per_axis[axis])
        all_angles.append(angles)
        counts, _ = np.histogram(angles, bins=edges)
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            hist_lines.append(f"{axis},{lo:.10g},{hi:.10g},{int(c)}")
        frac = float(np.mean(np.abs(angles) > np.pi / 2))
        fractions[axis] = frac
        frac_lines.append(f"{axis},{frac:.10g}")
    overall = float(np.mean(np.abs(np.concatenate(all_angles)) > np.pi / 2))
    frac_lines.append(f"all,{overall:.10g}")
    (out / "angle_histogram.csv").write_text("\n".join(hist_lines) + "\n")
    (out / "angle_stats.csv").write_text("\n".join(frac_lines) + "\n")

    freqs, speeds = [], []
    for clip in clips:
        try:
            traj, _ = extract_root_trajectory(skeleton, clip)
            contacts = detect_foot_contacts(skeleton, clip, feet)
            feats = compute_gait_features(traj, contacts, clip.frame_rate)
        except (InsufficientContacts, Exception) as err:
            if not isinstance(err, (InsufficientContacts, KeyError, ValueError)):
                raise
            continue
        freqs.append(feats.step_frequency)
        speeds.append(feats.local_speed)
    gait_lines = ["freq_low,freq_high,speed_low,speed_high,count"]
    gait_counts = None
    if freqs:
        f = np.concatenate(freqs)
        s = np.concatenate(speeds)
        gait_counts, fe, se = np.histogram2d(f, s, bins=24)
        for i in range(len(fe) - 1):
            for j in range(len(se) - 1):
                c = int(gait_counts[i, j])
                if c:
                    gait_lines.append(f"{fe[i]:.10g},{fe[i+1]:.10g},{se[j]:.10g},{se[j+1]:.10g},{c}")
    (out / "gait_histogram.csv").write_text("\n".join(gait_lines) + "\n")
    return {"fractions": fractions, "overall_outside": overall, "gait_counts": gait_counts}
