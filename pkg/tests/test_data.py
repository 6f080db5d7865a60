import numpy as np
import pytest

from quatmotion import quat
from quatmotion.bvh import ParseError, write_bvh
from quatmotion.data import (
    ClipRecord,
    DatasetManifest,
    InconsistentWidth,
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
from quatmotion.gait import detect_foot_contacts
from quatmotion.skeleton import batched_forward_kinematics, mirror_clip

RNG = np.random.default_rng(99)


def test_parse_expmap_identity_line():
    clip = parse_expmap_text("0 0 0 0 0 0\n", has_translation=True)
    assert clip.joints == 1
    assert np.allclose(clip.rotations[0, 0], [1, 0, 0, 0])
    assert np.allclose(clip.root_positions[0], 0.0)


def test_parse_expmap_half_turn():
    clip = parse_expmap_text(f"1 2 3 {np.pi} 0 0\n")
    assert np.allclose(clip.root_positions[0], [1, 2, 3])
    assert np.allclose(clip.rotations[0, 0], [0, 1, 0, 0], atol=1e-12)


def test_parse_expmap_golden_matches_conversion_oracle():
    rng = np.random.default_rng(5)
    exp = rng.normal(size=(5, 2, 3))
    lines = "\n".join(
        " ".join(f"{v:.17g}" for v in np.concatenate([[0, 0, 0], frame.ravel()]))
        for frame in exp
    )
    clip = parse_expmap_text(lines)
    want = quat.fix_antipodal(quat.expmap_to_quat(exp))
    assert np.max(np.abs(clip.rotations - want)) < 1e-9
    validate_ingested_clip(clip)


def test_parse_expmap_errors():
    with pytest.raises(InconsistentWidth):
        parse_expmap_text("0 0 0 0 0 0\n0 0 0\n")
    with pytest.raises(ParseError):
        parse_expmap_text("0 0 x 0 0 0\n")
    with pytest.raises(ParseError):
        parse_expmap_text("0 0 0 0\n")


def test_downsample_identity_and_partition():
    spec = SyntheticSpec(preset="chain", joints=3, clips=1, frames=100, frame_rate=50.0)
    _, (clip,) = make_synthetic_dataset(spec, seed=1)
    assert downsample(clip, 1).frames == 100

    parts = [downsample(clip, 2, phase) for phase in range(2)]
    assert all(p.frames == 50 and p.frame_rate == 25.0 for p in parts)
    indices = sorted(list(range(0, 100, 2)) + list(range(1, 100, 2)))
    assert indices == list(range(100))
    for phase, part in enumerate(parts):
        assert np.array_equal(part.rotations, clip.rotations[phase::2])
        assert np.array_equal(part.root_positions, clip.root_positions[phase::2])


def test_augment_rotation_identity_and_composition():
    spec = SyntheticSpec(preset="biped", clips=1, frames=60)
    skel, (clip,) = make_synthetic_dataset(spec, seed=3)
    same = augment_rotation(clip, 0.0)
    assert np.max(np.abs(same.rotations - clip.rotations)) < 1e-15

    full = augment_rotation(clip, 2 * np.pi)
    dots = np.abs(np.sum(full.rotations * clip.rotations, axis=-1))
    assert np.min(dots) > 1.0 - 1e-12

    a, b = 0.7, -1.3
    ab = augment_rotation(augment_rotation(clip, a), b)
    once = augment_rotation(clip, a + b)
    dots = np.abs(np.sum(ab.rotations * once.rotations, axis=-1))
    assert np.min(dots) > 1.0 - 1e-12
    assert np.max(np.abs(ab.root_positions - once.root_positions)) < 1e-9


def test_augment_rotation_fk_equivariance():
    spec = SyntheticSpec(preset="biped", clips=1, frames=40)
    skel, (clip,) = make_synthetic_dataset(spec, seed=4)
    yaw = float(RNG.uniform(-np.pi, np.pi))
    rotated = augment_rotation(clip, yaw)
    fk_rot = batched_forward_kinematics(skel, rotated.rotations, rotated.root_positions)
    fk_orig = batched_forward_kinematics(skel, clip.rotations, clip.root_positions)
    q_yaw = quat.axis_angle_quat([0, 1, 0], yaw)
    want = quat.qrotate(np.broadcast_to(q_yaw, fk_orig.shape[:-1] + (4,)), fk_orig)
    assert np.max(np.abs(fk_rot - want)) < 1e-9


def test_synthetic_determinism_and_zero_band():
    spec = SyntheticSpec(preset="biped", clips=2, frames=50)
    _, a = make_synthetic_dataset(spec, seed=11)
    _, b = make_synthetic_dataset(spec, seed=11)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.rotations, cb.rotations)
        assert np.array_equal(ca.root_positions, cb.root_positions)

    frozen_spec = SyntheticSpec(preset="biped", clips=2, frames=50, freq_band=(0.0, 0.0))
    _, frozen = make_synthetic_dataset(frozen_spec, seed=11)
    for c in frozen:
        assert np.max(np.abs(c.rotations - c.rotations[0])) == 0.0
        assert np.max(np.abs(c.root_positions - c.root_positions[0])) == 0.0


def test_synthetic_biped_has_alternating_contacts():
    spec = SyntheticSpec(preset="biped", clips=3, frames=200)
    skel, clips = make_synthetic_dataset(spec, seed=2)
    for clip in clips:
        contacts = detect_foot_contacts(skel, clip, ("LeftFoot", "RightFoot"), 0.3)
        assert len(contacts.left_onsets) >= 3
        assert len(contacts.right_onsets) >= 3
        events = sorted(
            [(f, "L") for f in contacts.left_onsets] + [(f, "R") for f in contacts.right_onsets]
        )
        labels = [side for _, side in events]
        assert all(a != b for a, b in zip(labels, labels[1:]))


def test_synthetic_clips_pass_ingestion_invariants():
    spec = SyntheticSpec(preset="biped", clips=2, frames=80)
    _, clips = make_synthetic_dataset(spec, seed=5)
    for c in clips:
        validate_ingested_clip(c)


def test_mirror_round_trip_on_clips():
    spec = SyntheticSpec(preset="biped", clips=1, frames=30)
    skel, (clip,) = make_synthetic_dataset(spec, seed=6)
    back = mirror_clip(skel, mirror_clip(skel, clip))
    assert np.max(np.abs(back.rotations - clip.rotations)) < 1e-12


def test_cache_round_trip(tmp_path):
    spec = SyntheticSpec(preset="biped", clips=3, frames=40)
    skel, clips = make_synthetic_dataset(spec, seed=8)
    path = tmp_path / "data.qnds"
    save_cache(path, skel, clips, meta={"note": "test"})
    skel2, clips2, meta = load_cache(path)
    assert skel2.names == skel.names
    assert np.allclose(skel2.offsets, skel.offsets)
    assert meta == {"note": "test"}
    assert len(clips2) == len(clips)
    for a, b in zip(clips, clips2):
        assert np.array_equal(a.rotations, b.rotations)
        assert np.array_equal(a.root_positions, b.root_positions)
        assert a.subject == b.subject and a.action == b.action


def test_manifest_round_trip():
    m = DatasetManifest(protocol="locomotion", seed=3, cache="cache.qnds",
                        preprocess={"mirror": "on"})
    m.clips.append(ClipRecord("locomotion/a.bvh", "a", "locomotion", "train"))
    m.clips.append(ClipRecord("locomotion/b.bvh", "b", "locomotion", "test"))
    text = m.to_text()
    m2 = DatasetManifest.from_text(text)
    assert m2.protocol == "locomotion" and m2.seed == 3 and m2.cache == "cache.qnds"
    assert m2.preprocess == {"mirror": "on"}
    assert [c.split for c in m2.clips] == ["train", "test"]
    assert m2.split_indices("test") == [1]


def test_build_manifest_missing_dir(tmp_path):
    with pytest.raises(MissingData):
        build_manifest(tmp_path, "h36m_short_term")
    with pytest.raises(MissingData):
        build_manifest(tmp_path, "locomotion")


def test_build_manifest_h36m_stub(tmp_path):
    base = tmp_path / "h36m"
    for subject in ("S1", "S5", "S6", "S7", "S8", "S9", "S11"):
        d = base / subject
        d.mkdir(parents=True)
        for action in ("walking", "eating"):
            for k in (1, 2):
                (d / f"{action}_{k}.txt").write_text("0 0 0 0 0 0\n")
    manifest = build_manifest(tmp_path, "h36m_short_term")
    test_clips = [c for c in manifest.clips if c.split == "test"]
    assert len(test_clips) == 4
    assert all(c.subject == "S5" for c in test_clips)
    assert len(manifest.clips) == 7 * 4
    assert {c.action for c in manifest.clips} == {"walking", "eating"}


def test_build_manifest_locomotion_from_exported_synthetic(tmp_path):
    spec = SyntheticSpec(preset="biped", clips=4, frames=30)
    skel, clips = make_synthetic_dataset(spec, seed=9)
    base = tmp_path / "locomotion"
    base.mkdir()
    for i, clip in enumerate(clips):
        (base / f"clip{i}.bvh").write_text(write_bvh(skel, clip))
    manifest = build_manifest(tmp_path, "locomotion", seed=1)
    assert len(manifest.clips) == 4
    assert all(c.split in ("train", "test") for c in manifest.clips)
    assert any(c.split == "test" for c in manifest.clips)
