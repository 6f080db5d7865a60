// Pointer strokes on the top-down canvas become trajectory extensions.
// Points are thinned by distance before they even reach the rate-limited
// control queue, and the already-traversed part of the path is never edited.

import type { Vec2 } from "./protocol";

export interface StrokeSink {
  extendTrajectory(points: Vec2[]): void;
}

export class TrajectoryDrawTool {
  private active = false;
  private lastCommitted: Vec2 | null = null;

  constructor(
    private readonly sink: StrokeSink,
    private readonly minSpacing = 0.05, // ground units between committed points
  ) {}

  strokeStart(p: Vec2): void {
    this.active = true;
    this.commit(p);
  }

  strokeMove(p: Vec2): void {
    if (!this.active) return;
    if (this.lastCommitted && distance(this.lastCommitted, p) < this.minSpacing) return;
    this.commit(p);
  }

  strokeEnd(p?: Vec2): void {
    if (p && this.active) this.commit(p, true);
    this.active = false;
  }

  private commit(p: Vec2, force = false): void {
    if (!force && this.lastCommitted && distance(this.lastCommitted, p) < this.minSpacing) return;
    this.lastCommitted = p;
    this.sink.extendTrajectory([p]);
  }
}

function distance(a: Vec2, b: Vec2): number {
  return Math.hypot(a[0] - b[0], a[1] - b[1]);
}
