// Client-side state: the drawn trajectory, a bounded frame buffer
// (drop-oldest), readouts derived from streamed frames, and footfall
// indicator events. Everything rendered is a pure function of this state, so
// replaying a buffer after a reconnect reproduces the identical scene.

import type { FrameMessage, ServerMessage, SkeletonMessage, Vec2 } from "./protocol";
import { FootfallDetector, SceneModel, buildScene, groundDistance } from "./scene";

export interface Readouts {
  speed: number | null; // ground-plane units/s from consecutive roots
  strideFrequency: number | null; // walk cycles per second from theta
  time: number | null;
}

export class FrameBuffer {
  private items: FrameMessage[] = [];

  constructor(readonly capacity = 600) {}

  push(frame: FrameMessage): void {
    this.items.push(frame);
    if (this.items.length > this.capacity) {
      this.items.splice(0, this.items.length - this.capacity);
    }
  }

  get frames(): readonly FrameMessage[] {
    return this.items;
  }

  get latest(): FrameMessage | null {
    return this.items.length ? this.items[this.items.length - 1] : null;
  }

  clear(): void {
    this.items = [];
  }
}

export interface IndicatorEvent {
  left: boolean;
  right: boolean;
  atIndex: number;
}

export class ViewState {
  skeleton: SkeletonMessage | null = null;
  sessionId: string | null = null;
  buffer = new FrameBuffer();
  drawn: Vec2[] = [];
  lastError: { code: string; message: string } | null = null;
  requestedSpeed = 1.0;
  private detector = new FootfallDetector();
  private indicatorLog: IndicatorEvent[] = [];

  applyServer(msg: ServerMessage): void {
    switch (msg.type) {
      case "skeleton":
        this.skeleton = msg;
        this.sessionId = msg.session;
        break;
      case "frame": {
        this.buffer.push(msg);
        const hit = this.detector.update(msg.theta);
        if (hit.left || hit.right) {
          this.indicatorLog.push({ ...hit, atIndex: msg.index });
        }
        break;
      }
      case "error":
        this.lastError = { code: msg.code, message: msg.message ?? "" };
        break;
      case "ack":
        break;
    }
  }

  get indicators(): readonly IndicatorEvent[] {
    return this.indicatorLog;
  }

  scene(): SceneModel | null {
    const frame = this.buffer.latest;
    if (!this.skeleton || !frame) return null;
    return buildScene(this.skeleton, frame);
  }

  readouts(): Readouts {
    const frames = this.buffer.frames;
    if (!this.skeleton || frames.length < 2) {
      return { speed: null, strideFrequency: null, time: frames.length ? frames[0].t : null };
    }
    const a = frames[frames.length - 2];
    const b = frames[frames.length - 1];
    const dt = b.t - a.t;
    if (dt <= 0) return { speed: null, strideFrequency: null, time: b.t };
    const tau = 2 * Math.PI;
    let dtheta = b.theta - a.theta;
    if (dtheta < -Math.PI) dtheta += tau;
    return {
      speed: groundDistance(a.root as never, b.root as never) / dt,
      strideFrequency: dtheta / dt / tau,
      time: b.t,
    };
  }

  // Replay support: rebuilding every scene from the buffer is deterministic.
  replayScenes(): SceneModel[] {
    if (!this.skeleton) return [];
    return this.buffer.frames.map((f) => buildScene(this.skeleton as SkeletonMessage, f));
  }
}
