import { ObstacleState } from "./protocol.js";

// Canvas pixels and arena units differ in scale and in the direction of
// the y axis (canvas grows downward, the arena upward).  The arena is
// letterboxed into the canvas, preserving aspect ratio.

export interface Viewport {
  arenaWidth: number;
  arenaHeight: number;
  canvasWidth: number;
  canvasHeight: number;
}

export function scaleOf(vp: Viewport): number {
  return Math.min(
    vp.canvasWidth / vp.arenaWidth,
    vp.canvasHeight / vp.arenaHeight,
  );
}

function offsets(vp: Viewport): { ox: number; oy: number } {
  const s = scaleOf(vp);
  return {
    ox: (vp.canvasWidth - vp.arenaWidth * s) / 2,
    oy: (vp.canvasHeight - vp.arenaHeight * s) / 2,
  };
}

export function toCanvas(
  vp: Viewport,
  x: number,
  y: number,
): { px: number; py: number } {
  const s = scaleOf(vp);
  const { ox, oy } = offsets(vp);
  return { px: ox + x * s, py: vp.canvasHeight - oy - y * s };
}

export function toWorld(
  vp: Viewport,
  px: number,
  py: number,
): { x: number; y: number } {
  const s = scaleOf(vp);
  const { ox, oy } = offsets(vp);
  return { x: (px - ox) / s, y: (vp.canvasHeight - oy - py) / s };
}

// Obstacle under an arena-coordinate point; with overlapping disks the
// nearest center wins.  Returns null on open ground.
export function pickObstacle(
  obstacles: readonly ObstacleState[],
  x: number,
  y: number,
): number | null {
  let bestId: number | null = null;
  let bestDistance = Infinity;
  for (const obstacle of obstacles) {
    const distance = Math.hypot(x - obstacle.cx, y - obstacle.cy);
    if (distance <= obstacle.r && distance < bestDistance) {
      bestDistance = distance;
      bestId = obstacle.id;
    }
  }
  return bestId;
}
