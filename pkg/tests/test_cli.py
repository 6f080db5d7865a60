import hashlib

import numpy as np
import pytest

from quatmotion.cli import main


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_prepare_synthetic_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        code = main(["prepare", "--synthetic", "biped", "--seed", "7", "--out", str(out),
                     "--clips", "4", "--frames", "80"])
        assert code == 0
        assert (out / "manifest.txt").exists()
    assert digest(a / "dataset.qnds") == digest(b / "dataset.qnds")
    assert (a / "manifest.txt").read_text() == (b / "manifest.txt").read_text()


def test_prepare_missing_dir(tmp_path, capsys):
    code = main(["prepare", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "out")])
    assert code == 3
    assert "nope" in capsys.readouterr().err


def test_prepare_h36m_stub_lists_actions(tmp_path, capsys):
    actions = ["directions", "discussion", "eating", "greeting", "phoning",
               "posing", "purchases", "sitting", "sittingdown", "smoking",
               "takingphoto", "waiting", "walking", "walkingdog", "walkingtogether"]
    rng = np.random.default_rng(0)
    base = tmp_path / "data" / "h36m"
    for subject in ("S1", "S5", "S6", "S7", "S8", "S9", "S11"):
        d = base / subject
        d.mkdir(parents=True)
        for action in actions:
            rows = []
            for _ in range(130):
                vals = np.concatenate([[0, 0, 0], rng.normal(size=9) * 0.4])
                rows.append(" ".join(f"{v:.8g}" for v in vals))
            (d / f"{action}_1.txt").write_text("\n".join(rows) + "\n")
    code = main(["prepare", "--data", str(tmp_path / "data"), "--protocol", "h36m_short_term",
                 "--out", str(tmp_path / "out")])
    assert code == 0
    out = capsys.readouterr().out
    for action in actions:
        assert action in out
    manifest = (tmp_path / "out" / "manifest.txt").read_text()
    assert "test" in manifest and "S5" in manifest


def test_eval_baseline_zero_on_constant_clips(tmp_path, capsys):
    out = tmp_path / "d"
    main(["prepare", "--synthetic", "biped", "--seed", "3", "--out", str(out),
          "--clips", "4", "--frames", "80", "--freq-lo", "0", "--freq-hi", "0"])
    code = main(["eval-shortterm", "--manifest", str(out / "manifest.txt"),
                 "--baseline", "zero_velocity", "--n", "20",
                 "--out", str(tmp_path / "report")])
    assert code == 0
    csv = (tmp_path / "report.csv").read_text()
    for line in csv.strip().splitlines()[1:]:
        assert float(line.split(",")[-1]) == 0.0


def test_eval_seeded_csv_identical(tmp_path):
    out = tmp_path / "d"
    main(["prepare", "--synthetic", "biped", "--seed", "5", "--out", str(out),
          "--clips", "6", "--frames", "120"])
    args = ["eval-shortterm", "--manifest", str(out / "manifest.txt"),
            "--baseline", "run_avg2", "--n", "20", "--seed", "11"]
    main(args + ["--out", str(tmp_path / "r1")])
    main(args + ["--out", str(tmp_path / "r2")])
    assert (tmp_path / "r1.csv").read_bytes() == (tmp_path / "r2.csv").read_bytes()


def test_eval_requires_predictor(tmp_path, capsys):
    out = tmp_path / "d"
    main(["prepare", "--synthetic", "biped", "--seed", "5", "--out", str(out),
          "--clips", "4", "--frames", "80"])
    code = main(["eval-shortterm", "--manifest", str(out / "manifest.txt")])
    assert code == 3


def test_train_pose_shortterm_smoke(tmp_path, capsys):
    out = tmp_path / "d"
    main(["prepare", "--synthetic", "biped", "--seed", "4", "--out", str(out),
          "--clips", "4", "--frames", "100"])
    code = main(["train-pose", "--manifest", str(out / "manifest.txt"),
                 "--out", str(tmp_path / "pose.ckpt"),
                 "--set", "hidden=8", "--set", "epochs=2", "--set", "n=10", "--set", "k=5",
                 "--seed", "1"])
    assert code == 0
    assert (tmp_path / "pose.ckpt").exists()


def test_loss_compare_zero_epochs(tmp_path):
    out = tmp_path / "d"
    main(["prepare", "--synthetic", "biped", "--seed", "4", "--out", str(out),
          "--clips", "4", "--frames", "120"])
    code = main(["loss-compare", "--manifest", str(out / "manifest.txt"),
                 "--out", str(tmp_path / "cmp"),
                 "--set", "epochs=0", "--set", "n=20", "--set", "k=10", "--set", "hidden=8"])
    assert code == 0
    curves = (tmp_path / "cmp" / "curves.csv").read_text().strip().splitlines()
    assert curves == ["epoch,arm,train_loss,angle_metric,position_metric"]
    for arm in ("angle", "position"):
        log = (tmp_path / "cmp" / f"gradnorm_{arm}.csv").read_text().strip().splitlines()
        assert log[0] == "step,pre_clip_norm"
        assert len(log) == 1


def test_generate_deterministic_and_speed_scaling(tmp_path, loco_workspace):
    traj = tmp_path / "path.txt"
    traj.write_text("0 0\n6 0\n")
    common = ["generate", "--trajectory", str(traj),
              "--pose", str(loco_workspace / "pose.ckpt"),
              "--pace", str(loco_workspace / "pace.ckpt"), "--seed", "1"]
    code = main(common + ["--speed", "1.0", "--out", str(tmp_path / "g1")])
    assert code == 0
    main(common + ["--speed", "1.0", "--out", str(tmp_path / "g1b")])
    assert digest(tmp_path / "g1.bvh") == digest(tmp_path / "g1b.bvh")
    assert digest(tmp_path / "g1_positions.csv") == digest(tmp_path / "g1b_positions.csv")

    main(common + ["--speed", "2.0", "--out", str(tmp_path / "g2")])
    n1 = len((tmp_path / "g1_positions.csv").read_text().strip().splitlines()) - 1
    n2 = len((tmp_path / "g2_positions.csv").read_text().strip().splitlines()) - 1
    assert abs(n2 - n1 / 2) <= 0.1 * n1 / 2 + 2


def test_stats_constant_identity_clips(tmp_path):
    out = tmp_path / "d"
    main(["prepare", "--synthetic", "biped", "--seed", "3", "--out", str(out),
          "--clips", "3", "--frames", "60", "--freq-lo", "0", "--freq-hi", "0"])
    code = main(["stats", "--manifest", str(out / "manifest.txt"), "--out", str(tmp_path / "s")])
    assert code == 0
    stats = (tmp_path / "s" / "angle_stats.csv").read_text().strip().splitlines()
    for line in stats[1:]:
        assert float(line.split(",")[1]) == 0.0
    hist = (tmp_path / "s" / "angle_histogram.csv").read_text().strip().splitlines()[1:]
    # all mass in the bins containing 0
    for line in hist:
        axis, lo, hi, count = line.split(",")
        if int(count) > 0:
            assert float(lo) <= 0.0 <= float(hi)


def test_prepare_locomotion_with_overrides(tmp_path):
    from quatmotion.bvh import write_bvh
    from quatmotion.data import SyntheticSpec, load_cache, make_synthetic_dataset

    spec = SyntheticSpec(preset="biped", clips=2, frames=40)
    skel, clips = make_synthetic_dataset(spec, seed=1)
    base = tmp_path / "data" / "locomotion"
    base.mkdir(parents=True)
    for i, clip in enumerate(clips):
        (base / f"c{i}.bvh").write_text(write_bvh(skel, clip))
    ov = tmp_path / "overrides.txt"
    ov.write_text("mirror Spine Spine\neuler_order Head zxy\n")
    code = main(["prepare", "--data", str(tmp_path / "data"), "--protocol", "locomotion",
                 "--out", str(tmp_path / "out"), "--overrides", str(ov)])
    assert code == 0
    skel2, _, _ = load_cache(tmp_path / "out" / "dataset.qnds")
    assert skel2.euler_orders[skel2.index("Head")] == "zxy"
    assert skel2.mirror_map[skel2.index("Spine")] == skel2.index("Spine")
    assert skel2.mirror_map[skel2.index("LeftFoot")] == skel2.index("RightFoot")


def test_report_csv_round_trip(tmp_path):
    from quatmotion.bench import eval_short_term, parse_report_csv

    out = tmp_path / "d"
    main(["prepare", "--synthetic", "biped", "--seed", "5", "--out", str(out),
          "--clips", "6", "--frames", "120"])
    report = eval_short_term(out / "manifest.txt", baseline="zero_velocity", n_condition=20,
                             out_prefix=tmp_path / "r")
    parsed = parse_report_csv((tmp_path / "r.csv").read_text())
    for action, errors in report["rows"]:
        for ms, err in zip(report["horizons_ms"], errors):
            assert parsed[(report["label"], action, ms)] == err  # lossless float round trip


def test_stats_gait_histogram_on_walking(tmp_path):
    out = tmp_path / "d"
    main(["prepare", "--synthetic", "biped", "--seed", "9", "--out", str(out),
          "--clips", "4", "--frames", "200"])
    main(["stats", "--manifest", str(out / "manifest.txt"), "--out", str(tmp_path / "s")])
    gait = (tmp_path / "s" / "gait_histogram.csv").read_text().strip().splitlines()
    assert len(gait) > 1  # nonempty histogram
    counts = [int(line.split(",")[-1]) for line in gait[1:]]
    # one dominant mode: the largest bin carries a sizable share
    assert max(counts) > 0.1 * sum(counts)
