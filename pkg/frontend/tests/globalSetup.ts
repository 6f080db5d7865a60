// Builds (and caches) the tiny checkpoints the end-to-end test serves.
// Skipped entirely when the backend package is unavailable.

import { execFileSync } from "node:child_process";
import { existsSync, mkdirSync } from "node:fs";
import { fileURLToPath } from "node:url";
import path from "node:path";

export default function setup(): void {
  const here = path.dirname(fileURLToPath(import.meta.url));
  const fixtureDir = path.join(here, "..", ".e2e");
  const pose = path.join(fixtureDir, "pose.ckpt");
  const pace = path.join(fixtureDir, "pace.ckpt");
  if (existsSync(pose) && existsSync(pace)) return;
  mkdirSync(fixtureDir, { recursive: true });
  const script = `
import sys
from pathlib import Path
from quatmotion.bench import prepare_synthetic, train_pace_command, train_pose_command

work = Path(sys.argv[1])
prepare_synthetic(work, preset="biped", seed=42, clips=8, frames=240)
manifest = work / "manifest.txt"
train_pose_command(manifest, work / "pose.ckpt", {
    "task": "locomotion", "hidden": "24", "layers": "2", "n": "20", "k": "8",
    "epochs": "15", "batch": "8", "lr": "3e-3", "seed": "1", "yaw_copies": "1",
})
train_pace_command(manifest, work / "pace.ckpt", {"epochs": "150", "seed": "1"})
print("fixtures ready")
`;
  try {
    execFileSync("python3", ["-c", script, fixtureDir], { stdio: "inherit", timeout: 540_000 });
  } catch (err) {
    console.warn("could not build e2e fixtures; the e2e test will be skipped:", err);
  }
}
