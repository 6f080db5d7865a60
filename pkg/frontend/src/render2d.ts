// Canvas drawing for the top-down trajectory editor and the phase dial.

import type { Vec2 } from "./protocol";
import { DialState } from "./scene";

export interface GroundView {
  centerX: number; // ground coords at the canvas center
  centerY: number;
  scale: number; // pixels per ground unit
}

export function groundToCanvas(view: GroundView, p: Vec2, w: number, h: number): Vec2 {
  return [w / 2 + (p[0] - view.centerX) * view.scale, h / 2 - (p[1] - view.centerY) * view.scale];
}

export function canvasToGround(view: GroundView, px: number, py: number, w: number, h: number): Vec2 {
  return [view.centerX + (px - w / 2) / view.scale, view.centerY - (py - h / 2) / view.scale];
}

export function drawTopDown(
  ctx: CanvasRenderingContext2D,
  view: GroundView,
  drawn: Vec2[],
  rootGround: Vec2 | null,
  rejectedEdit: boolean,
): void {
  const { width: w, height: h } = ctx.canvas;
  ctx.clearRect(0, 0, w, h);
  ctx.save();
  // grid
  ctx.strokeStyle = "#2a2f3a";
  ctx.lineWidth = 1;
  const step = view.scale;
  for (let x = (w / 2) % step; x < w; x += step) {
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, h);
    ctx.stroke();
  }
  for (let y = (h / 2) % step; y < h; y += step) {
    ctx.beginPath();
    ctx.moveTo(0, y);
    ctx.lineTo(w, y);
    ctx.stroke();
  }
  // trajectory: traversed part rendered locked (dimmer) behind the character
  if (drawn.length > 1) {
    let splitIndex = drawn.length;
    if (rootGround) {
      let best = Infinity;
      drawn.forEach((p, i) => {
        const d = Math.hypot(p[0] - rootGround[0], p[1] - rootGround[1]);
        if (d < best) {
          best = d;
          splitIndex = i;
        }
      });
    }
    const drawPath = (pts: Vec2[], style: string, width: number) => {
      if (pts.length < 2) return;
      ctx.strokeStyle = style;
      ctx.lineWidth = width;
      ctx.beginPath();
      pts.forEach((p, i) => {
        const [x, y] = groundToCanvas(view, p, w, h);
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      });
      ctx.stroke();
    };
    drawPath(drawn.slice(0, splitIndex + 1), "#5a5f6a", 3); // locked
    drawPath(drawn.slice(splitIndex), rejectedEdit ? "#b3394a" : "#58a6ff", 3);
  }
  if (rootGround) {
    const [x, y] = groundToCanvas(view, rootGround, w, h);
    ctx.fillStyle = "#ffd166";
    ctx.beginPath();
    ctx.arc(x, y, 6, 0, 2 * Math.PI);
    ctx.fill();
  }
  ctx.restore();
}

export function drawDial(
  ctx: CanvasRenderingContext2D,
  dial: DialState,
  leftFlash: number,
  rightFlash: number,
): void {
  const { width: w, height: h } = ctx.canvas;
  const cx = w / 2;
  const cy = h / 2;
  const r = Math.min(w, h) / 2 - 8;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#454b57";
  ctx.lineWidth = 3;
  ctx.beginPath();
  ctx.arc(cx, cy, r, 0, 2 * Math.PI);
  ctx.stroke();
  // contact marks: left at phase 0 (top), right at π (bottom)
  const mark = (phase: number, flash: number, label: string) => {
    const x = cx + r * Math.sin(phase);
    const y = cy - r * Math.cos(phase);
    ctx.fillStyle = flash > 0 ? "#ffd166" : "#8b949e";
    ctx.beginPath();
    ctx.arc(x, y, flash > 0 ? 7 : 4, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillText(label, x + 8, y);
  };
  ctx.fillStyle = "#8b949e";
  ctx.font = "10px sans-serif";
  mark(dial.leftMark, leftFlash, "L");
  mark(dial.rightMark, rightFlash, "R");
  // needle
  ctx.strokeStyle = "#58a6ff";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(cx, cy);
  ctx.lineTo(cx + r * Math.sin(dial.theta), cy - r * Math.cos(dial.theta));
  ctx.stroke();
}
