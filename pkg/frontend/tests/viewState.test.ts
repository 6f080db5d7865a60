import { describe, expect, it } from "vitest";

import type { FrameMessage, SkeletonMessage } from "../src/protocol";
import { FootfallDetector, boneLengths, boneSegments } from "../src/scene";
import { FrameBuffer, ViewState } from "../src/viewState";

const skeleton: SkeletonMessage = {
  type: "skeleton",
  session: "sid",
  frame_rate: 25,
  names: ["root", "a", "b"],
  parents: [-1, 0, 1],
  offsets: [
    [0, 0, 0],
    [0, 1, 0],
    [0, 1, 0],
  ],
  end_site: [false, false, false],
};

function frame(index: number, theta = 0, rootX = 0): FrameMessage {
  return {
    type: "frame",
    index,
    t: index / 25,
    theta,
    root: [rootX, 0, 0],
    quats: [
      [1, 0, 0, 0],
      [1, 0, 0, 0],
      [1, 0, 0, 0],
    ],
    positions: [
      [rootX, 0, 0],
      [rootX, 1, 0],
      [rootX, 2, 0],
    ],
  };
}

describe("FrameBuffer", () => {
  it("drops oldest beyond capacity", () => {
    const buf = new FrameBuffer(3);
    for (let i = 0; i < 5; i++) buf.push(frame(i));
    expect(buf.frames.map((f) => f.index)).toEqual([2, 3, 4]);
    expect(buf.latest?.index).toBe(4);
  });
});

describe("scene construction", () => {
  it("uses streamed positions verbatim (no client kinematics)", () => {
    const f = frame(1, 0, 3);
    const bones = boneSegments(skeleton.parents, f.positions);
    expect(bones.length).toBe(2);
    expect(bones[0].from).toBe(f.positions[0]);
    expect(bones[0].to).toBe(f.positions[1]);
    expect(boneLengths(bones)).toEqual([1, 1]);
  });

  it("identity pose renders at the root with constant bone lengths", () => {
    const state = new ViewState();
    state.applyServer(skeleton);
    for (let i = 0; i < 10; i++) state.applyServer(frame(i, 0, i * 0.1));
    const lengths = state
      .replayScenes()
      .map((s) => boneLengths(s.bones));
    for (const l of lengths) expect(l).toEqual([1, 1]);
  });
});

describe("replay determinism", () => {
  it("rebuilding scenes from the buffer reproduces the identical scene", () => {
    const state = new ViewState();
    state.applyServer(skeleton);
    for (let i = 0; i < 6; i++) state.applyServer(frame(i, i * 0.3, i * 0.04));
    const once = JSON.stringify(state.replayScenes());
    const twice = JSON.stringify(state.replayScenes());
    expect(twice).toBe(once);
  });
});

describe("footfall edge trigger", () => {
  it("fires right exactly once per pi crossing and left per 2pi wrap", () => {
    const det = new FootfallDetector();
    const thetas: number[] = [];
    for (let i = 0; i <= 100; i++) thetas.push(((i * 0.1) % (2 * Math.PI)));
    let left = 0;
    let right = 0;
    for (const th of thetas) {
      const hit = det.update(th);
      if (hit.left) left++;
      if (hit.right) right++;
    }
    const total = 100 * 0.1;
    expect(left).toBe(Math.floor(total / (2 * Math.PI)));
    expect(right).toBe(Math.floor((total - Math.PI) / (2 * Math.PI)) + 1);
  });

  it("records indicator events through ViewState", () => {
    const state = new ViewState();
    state.applyServer(skeleton);
    const step = 0.5;
    for (let i = 1; i <= 20; i++) state.applyServer(frame(i, (i * step) % (2 * Math.PI)));
    const rights = state.indicators.filter((e) => e.right).length;
    const lefts = state.indicators.filter((e) => e.left).length;
    expect(rights).toBe(Math.floor((20 * step - Math.PI) / (2 * Math.PI)) + 1);
    expect(lefts).toBe(Math.floor((20 * step) / (2 * Math.PI)));
  });
});

describe("readouts", () => {
  it("derives speed and stride frequency from streamed frames only", () => {
    const state = new ViewState();
    state.applyServer(skeleton);
    state.applyServer(frame(1, 0.0, 0.0));
    state.applyServer(frame(2, 0.2, 0.04)); // 0.04 units in 1/25 s -> 1 u/s
    const r = state.readouts();
    expect(r.speed).toBeCloseTo(1.0, 9);
    expect(r.strideFrequency).toBeCloseTo((0.2 * 25) / (2 * Math.PI), 9);
  });
});
