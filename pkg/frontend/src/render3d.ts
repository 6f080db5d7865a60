// Minimal software-projected 3D view: orbit camera around a target point,
// perspective projection, bones drawn as depth-sorted line segments. No
// client-side kinematics; positions come from the stream.

import type { SceneModel, Vec3 } from "./scene";

export interface OrbitCamera {
  target: Vec3;
  yaw: number; // radians around the vertical axis
  pitch: number; // radians above the ground plane
  distance: number;
  fov: number; // vertical field of view, radians
}

export function defaultCamera(): OrbitCamera {
  return { target: [0, 0.8, 0], yaw: 0.6, pitch: 0.35, distance: 4.0, fov: Math.PI / 4 };
}

export interface Projected {
  x: number; // normalized device coords, -1..1
  y: number;
  depth: number;
}

export function cameraPosition(cam: OrbitCamera): Vec3 {
  const cp = Math.cos(cam.pitch);
  return [
    cam.target[0] + cam.distance * cp * Math.sin(cam.yaw),
    cam.target[1] + cam.distance * Math.sin(cam.pitch),
    cam.target[2] + cam.distance * cp * Math.cos(cam.yaw),
  ];
}

export function project(cam: OrbitCamera, p: Vec3): Projected | null {
  const eye = cameraPosition(cam);
  // camera basis: forward toward target, right, up
  const f = normalize(sub(cam.target, eye));
  const r = normalize(cross(f, [0, 1, 0]));
  const u = cross(r, f);
  const d = sub(p, eye);
  const z = dot(d, f);
  if (z <= 1e-6) return null; // behind the camera
  const scale = 1 / Math.tan(cam.fov / 2);
  return { x: (dot(d, r) / z) * scale, y: (dot(d, u) / z) * scale, depth: z };
}

export interface Line2 {
  ax: number;
  ay: number;
  bx: number;
  by: number;
  depth: number;
}

export function projectScene(cam: OrbitCamera, scene: SceneModel): Line2[] {
  const lines: Line2[] = [];
  for (const bone of scene.bones) {
    const a = project(cam, bone.from);
    const b = project(cam, bone.to);
    if (!a || !b) continue;
    lines.push({ ax: a.x, ay: a.y, bx: b.x, by: b.y, depth: (a.depth + b.depth) / 2 });
  }
  lines.sort((l, m) => m.depth - l.depth); // far to near
  return lines;
}

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / n, v[1] / n, v[2] / n];
}
