// Studio wiring: DOM, pointer events, slider, stream ticker. All motion
// logic lives in the imported modules; this file only moves data between the
// socket, the view state and the canvases.

import { StudioClient } from "./client";
import { TrajectoryDrawTool } from "./draw";
import { canvasToGround, drawDial, drawTopDown, GroundView } from "./render2d";
import { defaultCamera, projectScene } from "./render3d";
import { dialState } from "./scene";
import { ViewState } from "./viewState";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function main(): void {
  const topCanvas = el<HTMLCanvasElement>("topdown");
  const viewCanvas = el<HTMLCanvasElement>("view3d");
  const dialCanvas = el<HTMLCanvasElement>("dial");
  const speedSlider = el<HTMLInputElement>("speed");
  const speedOut = el<HTMLElement>("speed-readout");
  const freqOut = el<HTMLElement>("freq-readout");
  const statusOut = el<HTMLElement>("status");
  const openBtn = el<HTMLButtonElement>("open");
  const poseInput = el<HTMLInputElement>("pose-id");
  const paceInput = el<HTMLInputElement>("pace-id");

  const state = new ViewState();
  const view: GroundView = { centerX: 0, centerY: 4, scale: 40 };
  const camera = defaultCamera();
  let leftFlash = 0;
  let rightFlash = 0;
  let rejectedEdit = 0;
  let seenIndicators = 0;

  const url = `ws://${location.host}/ws`;
  const client = new StudioClient({
    url,
    onMessage: (msg) => {
      state.applyServer(msg);
      if (msg.type === "error" && msg.code === "PathBehindCharacter") rejectedEdit = 20;
      if (msg.type === "error" && msg.code === "EndOfTrajectory") {
        statusOut.textContent = "end of trajectory — draw more path";
      }
    },
    onStatus: (s) => {
      statusOut.textContent = s;
    },
  });
  client.connect();

  openBtn.onclick = () => {
    state.buffer.clear();
    state.drawn = [];
    client.open(poseInput.value || "pose", paceInput.value || "pace", undefined,
                Number(speedSlider.value));
  };

  const draw = new TrajectoryDrawTool({
    extendTrajectory: (pts) => {
      state.drawn.push(...pts);
      client.extendTrajectory(pts);
    },
  });
  const toGround = (ev: PointerEvent) => {
    const rect = topCanvas.getBoundingClientRect();
    return canvasToGround(view, ev.clientX - rect.left, ev.clientY - rect.top,
                          topCanvas.width, topCanvas.height);
  };
  topCanvas.onpointerdown = (ev) => {
    topCanvas.setPointerCapture(ev.pointerId);
    draw.strokeStart(toGround(ev));
  };
  topCanvas.onpointermove = (ev) => draw.strokeMove(toGround(ev));
  topCanvas.onpointerup = (ev) => draw.strokeEnd(toGround(ev));

  speedSlider.oninput = () => client.setTargetSpeed(Number(speedSlider.value));

  viewCanvas.onpointermove = (ev) => {
    if (ev.buttons !== 1) return;
    camera.yaw += ev.movementX * 0.01;
    camera.pitch = Math.min(1.4, Math.max(-0.2, camera.pitch + ev.movementY * 0.01));
  };
  viewCanvas.onwheel = (ev) => {
    camera.distance = Math.min(20, Math.max(1, camera.distance * (1 + ev.deltaY * 0.001)));
    ev.preventDefault();
  };

  // pull-based stepping at the model frame rate once a session exists
  setInterval(() => {
    if (state.sessionId) client.step(1);
  }, 40);

  const render = () => {
    const scene = state.scene();
    const rootGround = scene ? ([scene.root[0], scene.root[2]] as [number, number]) : null;
    drawTopDown(topCanvas.getContext("2d")!, view, state.drawn, rootGround, rejectedEdit > 0);
    if (rejectedEdit > 0) rejectedEdit -= 1;

    if (scene) {
      camera.target = [scene.root[0], scene.root[1], scene.root[2]];
      const ctx = viewCanvas.getContext("2d")!;
      const { width: w, height: h } = viewCanvas;
      ctx.clearRect(0, 0, w, h);
      ctx.strokeStyle = "#e6edf3";
      ctx.lineWidth = 3;
      for (const line of projectScene(camera, scene)) {
        ctx.beginPath();
        ctx.moveTo(w / 2 + (line.ax * w) / 2, h / 2 - (line.ay * h) / 2);
        ctx.lineTo(w / 2 + (line.bx * w) / 2, h / 2 - (line.by * h) / 2);
        ctx.stroke();
      }
      // footfall flashes: consume new indicator events
      const events = state.indicators;
      for (; seenIndicators < events.length; seenIndicators++) {
        if (events[seenIndicators].left) leftFlash = 8;
        if (events[seenIndicators].right) rightFlash = 8;
      }
      drawDial(dialCanvas.getContext("2d")!, dialState(scene.theta), leftFlash, rightFlash);
      if (leftFlash > 0) leftFlash -= 1;
      if (rightFlash > 0) rightFlash -= 1;
    }

    const readouts = state.readouts();
    speedOut.textContent = readouts.speed === null ? "-" : readouts.speed.toFixed(2);
    freqOut.textContent =
      readouts.strideFrequency === null ? "-" : readouts.strideFrequency.toFixed(2);
    requestAnimationFrame(render);
  };
  requestAnimationFrame(render);
}

main();
