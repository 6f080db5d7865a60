import pytest


@pytest.fixture(scope="session")
def loco_workspace(tmp_path_factory):
    """A prepared synthetic dataset plus small locomotion pose/pace checkpoints.

    Shared by the CLI generate tests and the service tests; budgets are kept
    small because these tests exercise plumbing, not motion quality.
    """
    from quatmotion.bench import prepare_synthetic, train_pace_command, train_pose_command

    work = tmp_path_factory.mktemp("loco")
    prepare_synthetic(work, preset="biped", seed=42, clips=8, frames=240)
    manifest = work / "manifest.txt"
    train_pose_command(manifest, work / "pose.ckpt", {
        "task": "locomotion", "hidden": "24", "layers": "2", "n": "20", "k": "8",
        "epochs": "15", "batch": "8", "lr": "3e-3", "seed": "1", "yaw_copies": "1",
    })
    train_pace_command(manifest, work / "pace.ckpt", {"epochs": "150", "seed": "1"})
    return work
