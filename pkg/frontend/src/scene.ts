// Pure scene construction from streamed data. The skeleton on screen uses
// the server's FK positions verbatim; the client never runs kinematics.

import type { FrameMessage, SkeletonMessage } from "./protocol";

export type Vec3 = [number, number, number];

export interface BoneSegment {
  joint: number;
  parent: number;
  from: Vec3;
  to: Vec3;
}

export interface SceneModel {
  joints: Vec3[];
  bones: BoneSegment[];
  root: Vec3;
  theta: number;
  time: number;
}

export function boneSegments(parents: number[], positions: number[][]): BoneSegment[] {
  const bones: BoneSegment[] = [];
  for (let j = 0; j < parents.length; j++) {
    const p = parents[j];
    if (p < 0) continue;
    bones.push({
      joint: j,
      parent: p,
      from: positions[p] as Vec3,
      to: positions[j] as Vec3,
    });
  }
  return bones;
}

export function boneLengths(bones: BoneSegment[]): number[] {
  return bones.map((b) => {
    const dx = b.to[0] - b.from[0];
    const dy = b.to[1] - b.from[1];
    const dz = b.to[2] - b.from[2];
    return Math.hypot(dx, dy, dz);
  });
}

export function buildScene(skeleton: SkeletonMessage, frame: FrameMessage): SceneModel {
  return {
    joints: frame.positions as Vec3[],
    bones: boneSegments(skeleton.parents, frame.positions),
    root: frame.root as Vec3,
    theta: frame.theta,
    time: frame.t,
  };
}

// Walk-cycle phase dial: theta in [0, 2π), left-contact mark at 0 (= 2π),
// right-contact mark at π.
export interface DialState {
  theta: number;
  leftMark: number;
  rightMark: number;
}

export function dialState(theta: number): DialState {
  const tau = 2 * Math.PI;
  return { theta: ((theta % tau) + tau) % tau, leftMark: 0, rightMark: Math.PI };
}

// Edge-triggered footfall indicator: fires left when the (unwrapped) phase
// crosses a multiple of 2π, right when it crosses 2πk + π; exactly once per
// crossing. Assumes the per-frame phase advance stays below π.
export class FootfallDetector {
  private unwrapped: number | null = null;
  private lastMod = 0;

  update(thetaMod: number): { left: boolean; right: boolean } {
    if (this.unwrapped === null) {
      this.unwrapped = thetaMod;
      this.lastMod = thetaMod;
      return { left: false, right: false };
    }
    let delta = thetaMod - this.lastMod;
    const tau = 2 * Math.PI;
    if (delta < -Math.PI) delta += tau;
    else if (delta > Math.PI) delta -= tau;
    const prev = this.unwrapped;
    const next = prev + delta;
    this.unwrapped = next;
    this.lastMod = thetaMod;
    const left = Math.floor(next / tau) > Math.floor(prev / tau);
    const right = Math.floor((next - Math.PI) / tau) > Math.floor((prev - Math.PI) / tau);
    return { left, right };
  }
}

export function groundDistance(a: Vec3, b: Vec3): number {
  // vertical axis is y; the ground plane is (x, z)
  return Math.hypot(a[0] - b[0], a[2] - b[2]);
}
