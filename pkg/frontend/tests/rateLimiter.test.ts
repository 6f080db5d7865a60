import { describe, expect, it } from "vitest";

import type { ControlsMessage } from "../src/protocol";
import { ControlScheduler, TokenBucket } from "../src/rateLimiter";

function fakeClock(start = 0) {
  let t = start;
  return {
    now: () => t,
    advance: (dt: number) => {
      t += dt;
    },
  };
}

describe("TokenBucket", () => {
  it("caps the sustained rate", () => {
    const clock = fakeClock();
    const bucket = new TokenBucket(10, 1, clock.now);
    let taken = 0;
    for (let i = 0; i < 1200; i++) {
      if (bucket.tryTake()) taken++;
      clock.advance(1 / 120); // 120 Hz attempts for 10 seconds
    }
    expect(taken).toBeLessThanOrEqual(101);
    expect(taken).toBeGreaterThanOrEqual(90); // near the cap, floating refill slack allowed
  });
});

describe("ControlScheduler", () => {
  it("coalesces a 120 Hz pointer stream to <= 10 messages/s", () => {
    const clock = fakeClock();
    const sent: ControlsMessage[] = [];
    const sched = new ControlScheduler((m) => sent.push(m), 10, clock.now);
    let pointCount = 0;
    for (let i = 0; i < 120; i++) {
      sched.queueExtend([[i * 0.01, 0]]);
      pointCount++;
      clock.advance(1 / 120);
      sched.pump();
    }
    // flush the remainder
    clock.advance(0.2);
    sched.pump();
    expect(sent.length).toBeLessThanOrEqual(11);
    const delivered = sent.flatMap((m) => m.extend_trajectory ?? []);
    expect(delivered.length).toBe(pointCount); // nothing dropped, only batched
  });

  it("keeps only the latest speed while limited", () => {
    const clock = fakeClock();
    const sent: ControlsMessage[] = [];
    const sched = new ControlScheduler((m) => sent.push(m), 10, clock.now);
    for (let i = 0; i <= 100; i++) {
      sched.queueSpeed(i / 100);
      clock.advance(1 / 240);
      sched.pump();
    }
    clock.advance(0.2);
    sched.pump();
    expect(sent.length).toBeLessThanOrEqual(6);
    expect(sent[sent.length - 1].set_target_speed).toBe(1.0);
  });

  it("combines pending edits into one message", () => {
    const clock = fakeClock();
    const sent: ControlsMessage[] = [];
    const sched = new ControlScheduler((m) => sent.push(m), 10, clock.now);
    sched.queueExtend([[0, 0]]);
    expect(sent.length).toBe(1); // bucket starts full
    sched.queueExtend([[1, 0]]);
    sched.queueSpeed(0.5);
    sched.queueFacing(0.1);
    expect(sent.length).toBe(1); // limited, held
    clock.advance(0.11);
    sched.pump();
    expect(sent.length).toBe(2);
    expect(sent[1].extend_trajectory).toEqual([[1, 0]]);
    expect(sent[1].set_target_speed).toBe(0.5);
    expect(sent[1].set_facing_offset).toBe(0.1);
  });
});
