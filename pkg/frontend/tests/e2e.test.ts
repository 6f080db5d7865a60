// End-to-end: drive a live generation service through the studio modules.
// Covers the full secondary acceptance path: draw a straight path, stream at
// speed 1, verify on-screen bone lengths, halt at speed 0, and confirm the
// outbound control-message rate limit.

import { ChildProcess, spawn } from "node:child_process";
import { existsSync } from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { WebSocket } from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { StudioClient } from "../src/client";
import { TrajectoryDrawTool } from "../src/draw";
import { boneLengths, groundDistance } from "../src/scene";
import { ViewState } from "../src/viewState";

const here = path.dirname(fileURLToPath(import.meta.url));
const fixtureDir = path.join(here, "..", ".e2e");
const havePython = existsSync(path.join(fixtureDir, "pose.ckpt"));

const PORT = 8899;
let server: ChildProcess | null = null;

async function waitForHealth(timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`http://127.0.0.1:${PORT}/health`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await sleep(250);
  }
  throw new Error("service did not become healthy");
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

interface Harness {
  client: StudioClient;
  state: ViewState;
  errors: string[];
}

function connectStudio(): Promise<Harness> {
  const state = new ViewState();
  const errors: string[] = [];
  return new Promise((resolve, reject) => {
    const client = new StudioClient({
      url: `ws://127.0.0.1:${PORT}/ws`,
      makeSocket: (url) => new WebSocket(url) as never,
      reconnect: false,
      onMessage: (msg) => {
        state.applyServer(msg);
        if (msg.type === "error") errors.push(msg.code);
      },
      onStatus: (s) => {
        if (s === "open") resolve({ client, state, errors });
        if (s === "closed") reject(new Error("socket closed before open"));
      },
    });
    client.connect();
  });
}

async function until(cond: () => boolean, timeoutMs = 20_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (cond()) return;
    await sleep(20);
  }
  throw new Error("condition not met in time");
}

describe.skipIf(!havePython)("studio against a live service", () => {
  beforeAll(async () => {
    server = spawn(
      "python3",
      ["-m", "quatmotion.cli", "serve", "--listen", `127.0.0.1:${PORT}`,
       "--checkpoint-dir", fixtureDir, "--max-sessions", "8"],
      { stdio: "ignore" },
    );
    await waitForHealth();
  });

  afterAll(() => {
    server?.kill();
  });

  it("draws a path, streams frames, halts at speed 0, and stays rate-limited", async () => {
    const { client, state } = await connectStudio();
    client.open("pose", "pace", undefined, 1.0);
    await until(() => state.sessionId !== null);
    const frameRate = state.skeleton!.frame_rate;

    // draw a straight 10-unit path through the stroke pipeline
    const draw = new TrajectoryDrawTool({
      extendTrajectory: (pts) => client.extendTrajectory(pts),
    }, 0.05);
    draw.strokeStart([0, 0]);
    for (let i = 1; i <= 100; i++) draw.strokeMove([0, i * 0.1]);
    draw.strokeEnd([0, 10]);
    await until(() => !client.scheduler.hasPending, 10_000);

    // stream >= 30 distinct frames at speed 1
    client.step(40);
    await until(() => state.buffer.frames.length >= 40);
    const frames = state.buffer.frames;
    expect(new Set(frames.map((f) => f.index)).size).toBeGreaterThanOrEqual(30);
    const roots = frames.map((f) => f.root as [number, number, number]);
    let distinct = 0;
    for (let i = 1; i < roots.length; i++) {
      if (groundDistance(roots[i], roots[i - 1]) > 1e-9) distinct++;
    }
    expect(distinct).toBeGreaterThanOrEqual(30);

    // on-screen bone lengths constant across the stream
    const scenes = state.replayScenes();
    const reference = boneLengths(scenes[0].bones);
    for (const scene of scenes) {
      const lengths = boneLengths(scene.bones);
      lengths.forEach((len, i) => {
        expect(Math.abs(len - reference[i]) / reference[i]).toBeLessThan(1e-6);
      });
    }
    const movingRate =
      frames.slice(1).reduce(
        (acc, f, i) => acc + groundDistance(f.root as never, frames[i].root as never), 0,
      ) / (frames.length - 1) * frameRate;
    expect(movingRate).toBeGreaterThan(0.2);

    // setting speed 0 halts root displacement within 2 s of stream time
    client.setTargetSpeed(0);
    await until(() => !client.scheduler.hasPending, 5_000);
    const before = state.buffer.frames.length;
    client.step(Math.round(2 * frameRate));
    await until(() => state.buffer.frames.length >= before + 2 * frameRate - 1);
    const tail = state.buffer.frames.slice(-Math.round(frameRate / 2));
    let tailRate = 0;
    for (let i = 1; i < tail.length; i++) {
      tailRate += groundDistance(tail[i].root as never, tail[i - 1].root as never);
    }
    tailRate = (tailRate / (tail.length - 1)) * frameRate;
    expect(tailRate).toBeLessThan(0.05 * movingRate);

    // rapid slider wiggle stays at <= 10 control messages per second
    const sentBefore = client.scheduler.sentCount;
    const t0 = Date.now();
    while (Date.now() - t0 < 1200) {
      client.setTargetSpeed(Math.random());
      await sleep(5);
    }
    const elapsed = (Date.now() - t0) / 1000;
    const sent = client.scheduler.sentCount - sentBefore;
    expect(sent).toBeLessThanOrEqual(Math.ceil(elapsed * 10) + 1);
    expect(sent).toBeGreaterThan(0);

    client.close();
  });

  it("rejects an edit behind the character with a visual-cue error", async () => {
    const { client, state, errors } = await connectStudio();
    client.open("pose", "pace", [[0, 0], [2, 0]], 1.0);
    await until(() => state.sessionId !== null);
    client.step(3);
    await until(() => state.buffer.frames.length >= 3);
    client.extendTrajectory([[2, 0]]); // duplicate of the path end: no new path
    client.flushControls();
    await until(() => errors.includes("PathBehindCharacter"));
    expect(state.lastError?.code).toBe("PathBehindCharacter");
    client.close();
  });
});
