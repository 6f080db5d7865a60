// Outbound control-message budget: a token bucket capped at `ratePerSec`,
// plus a coalescing queue so a 120 Hz pointer stream or a wiggling slider
// collapses into at most `ratePerSec` messages per second without losing the
// latest state.

import type { ControlsMessage, Vec2 } from "./protocol";

export type Clock = () => number; // seconds

export class TokenBucket {
  private tokens: number;
  private last: number;

  constructor(
    private readonly ratePerSec: number,
    private readonly capacity: number = 1,
    private readonly clock: Clock = () => Date.now() / 1000,
  ) {
    this.tokens = capacity;
    this.last = clock();
  }

  tryTake(): boolean {
    this.refill();
    if (this.tokens >= 1) {
      this.tokens -= 1;
      return true;
    }
    return false;
  }

  secondsUntilAvailable(): number {
    this.refill();
    if (this.tokens >= 1) return 0;
    return (1 - this.tokens) / this.ratePerSec;
  }

  private refill(): void {
    const now = this.clock();
    this.tokens = Math.min(this.capacity, this.tokens + (now - this.last) * this.ratePerSec);
    this.last = now;
  }
}

export interface PendingEdits {
  points: Vec2[];
  speed: number | null;
  facing: number | null;
}

export class ControlScheduler {
  private pending: PendingEdits = { points: [], speed: null, facing: null };
  private bucket: TokenBucket;
  sentCount = 0;

  constructor(
    private readonly send: (msg: ControlsMessage) => void,
    ratePerSec = 10,
    clock: Clock = () => Date.now() / 1000,
  ) {
    this.bucket = new TokenBucket(ratePerSec, 1, clock);
  }

  queueExtend(points: Vec2[]): void {
    this.pending.points.push(...points);
    this.pump();
  }

  queueSpeed(v: number): void {
    this.pending.speed = v;
    this.pump();
  }

  queueFacing(a: number): void {
    this.pending.facing = a;
    this.pump();
  }

  get hasPending(): boolean {
    return (
      this.pending.points.length > 0 || this.pending.speed !== null || this.pending.facing !== null
    );
  }

  secondsUntilFlush(): number {
    return this.hasPending ? this.bucket.secondsUntilAvailable() : Infinity;
  }

  // Call whenever an edit is queued and again from a timer while hasPending.
  pump(): void {
    if (!this.hasPending || !this.bucket.tryTake()) return;
    const msg: ControlsMessage = { type: "controls" };
    if (this.pending.points.length > 0) msg.extend_trajectory = this.pending.points;
    if (this.pending.speed !== null) msg.set_target_speed = this.pending.speed;
    if (this.pending.facing !== null) msg.set_facing_offset = this.pending.facing;
    this.pending = { points: [], speed: null, facing: null };
    this.sentCount += 1;
    this.send(msg);
  }
}
