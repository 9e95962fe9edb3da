import { StateFrame } from "./protocol.js";
import { Viewport, scaleOf, toCanvas } from "./hittest.js";

// The subset of CanvasRenderingContext2D the renderer touches, so tests
// can substitute a recording fake without a DOM.
export interface CanvasLike {
  fillStyle: string;
  strokeStyle: string;
  lineWidth: number;
  font: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  fill(): void;
  stroke(): void;
  fillText(text: string, x: number, y: number): void;
  save(): void;
  restore(): void;
  translate(x: number, y: number): void;
  rotate(angle: number): void;
}

const BACKGROUND = "#10141a";
const ARENA_EDGE = "#3a4454";
const OBSTACLE_FILL = "#8892a4";
const ROBOT_FILL = "#4cc9f0";
const HUD_TEXT = "#e8ecf2";

const ROBOT_DRAW_LENGTH = 1.2; // arena units, nose to tail

function drawRobot(
  ctx: CanvasLike,
  vp: Viewport,
  x: number,
  y: number,
  theta: number,
): void {
  const s = scaleOf(vp);
  const { px, py } = toCanvas(vp, x, y);
  const len = ROBOT_DRAW_LENGTH * s;
  ctx.save();
  ctx.translate(px, py);
  // canvas y points down, so a world heading rotates the other way
  ctx.rotate(-theta);
  ctx.beginPath();
  ctx.moveTo(0.6 * len, 0);
  ctx.lineTo(-0.4 * len, 0.35 * len);
  ctx.lineTo(-0.4 * len, -0.35 * len);
  ctx.closePath();
  ctx.fillStyle = ROBOT_FILL;
  ctx.fill();
  ctx.restore();
}

export function drawFrame(
  ctx: CanvasLike,
  vp: Viewport,
  frame: StateFrame,
): void {
  const s = scaleOf(vp);
  ctx.clearRect(0, 0, vp.canvasWidth, vp.canvasHeight);
  ctx.fillStyle = BACKGROUND;
  ctx.fillRect(0, 0, vp.canvasWidth, vp.canvasHeight);

  const origin = toCanvas(vp, 0, vp.arenaHeight);
  ctx.strokeStyle = ARENA_EDGE;
  ctx.lineWidth = 2;
  ctx.strokeRect(origin.px, origin.py, vp.arenaWidth * s, vp.arenaHeight * s);

  for (const obstacle of frame.obstacles) {
    const { px, py } = toCanvas(vp, obstacle.cx, obstacle.cy);
    ctx.beginPath();
    ctx.arc(px, py, obstacle.r * s, 0, 2 * Math.PI);
    ctx.fillStyle = OBSTACLE_FILL;
    ctx.fill();
  }

  for (const robot of frame.robots) {
    drawRobot(ctx, vp, robot.x, robot.y, robot.theta);
  }

  ctx.fillStyle = HUD_TEXT;
  ctx.font = "14px monospace";
  const hud = [`phase ${frame.phase}`, `score ${frame.score.toFixed(1)}`];
  if (frame.phase === "II" && frame.scenes_total !== undefined) {
    hud.push(`scene ${(frame.scene ?? 0) + 1}/${frame.scenes_total}`);
  }
  if (frame.phase === "III") {
    hud.push(`time ${frame.time_left.toFixed(1)}s`);
  }
  ctx.fillText(hud.join("   "), 12, 20);
}
