import { describe, expect, it } from "vitest";

import { TrajectoryDrawTool } from "../src/draw";
import type { Vec2 } from "../src/protocol";
import { project, defaultCamera, projectScene } from "../src/render3d";
import { buildScene } from "../src/scene";

describe("TrajectoryDrawTool", () => {
  it("thins dense pointer samples by distance", () => {
    const got: Vec2[] = [];
    const tool = new TrajectoryDrawTool({ extendTrajectory: (pts) => got.push(...pts) }, 0.1);
    tool.strokeStart([0, 0]);
    for (let i = 1; i <= 100; i++) tool.strokeMove([i * 0.01, 0]); // 1 unit total
    tool.strokeEnd([1.0, 0]);
    expect(got.length).toBeLessThanOrEqual(12);
    expect(got[0]).toEqual([0, 0]);
    expect(got.at(-1)).toEqual([1.0, 0]);
    // monotone progress along the stroke
    for (let i = 1; i < got.length; i++) expect(got[i][0]).toBeGreaterThan(got[i - 1][0]);
  });

  it("ignores moves when no stroke is active", () => {
    const got: Vec2[] = [];
    const tool = new TrajectoryDrawTool({ extendTrajectory: (pts) => got.push(...pts) });
    tool.strokeMove([1, 1]);
    expect(got.length).toBe(0);
  });
});

describe("3d projection", () => {
  it("projects the camera target to the view center", () => {
    const cam = defaultCamera();
    const p = project(cam, cam.target);
    expect(p).not.toBeNull();
    expect(Math.abs(p!.x)).toBeLessThan(1e-9);
    expect(Math.abs(p!.y)).toBeLessThan(1e-9);
  });

  it("orders projected bones far to near", () => {
    const cam = defaultCamera();
    const scene = buildScene(
      {
        type: "skeleton",
        session: "s",
        frame_rate: 25,
        names: ["r", "a", "b"],
        parents: [-1, 0, 0],
        offsets: [[0, 0, 0], [0, 1, 0], [0, 1, 0]],
        end_site: [false, false, false],
      },
      {
        type: "frame",
        index: 1,
        t: 0,
        theta: 0,
        root: [0, 0.8, 0],
        quats: [[1, 0, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0]],
        positions: [
          [0, 0.8, 0],
          [0, 1.6, 0],
          [0.3, 0.8, -1.0],
        ],
      },
    );
    const lines = projectScene(cam, scene);
    expect(lines.length).toBe(2);
    for (let i = 1; i < lines.length; i++) {
      expect(lines[i].depth).toBeLessThanOrEqual(lines[i - 1].depth);
    }
  });
});
