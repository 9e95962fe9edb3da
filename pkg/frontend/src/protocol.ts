// Wire protocol shared with the session service: JSON text frames over a
// websocket.  Parsing is defensive; a malformed frame yields null rather
// than an exception in the message pump.

export type Phase = "I" | "II" | "III";

export interface RobotState {
  id: number;
  x: number;
  y: number;
  theta: number;
}

export interface ObstacleState {
  id: number;
  cx: number;
  cy: number;
  r: number;
}

export interface StateFrame {
  type: "state";
  phase: Phase;
  tick: number;
  robots: RobotState[];
  obstacles: ObstacleState[];
  score: number;
  time_left: number;
  scene?: number;
  scenes_total?: number;
}

export interface EventFrame {
  type: "event";
  kind: string;
  [extra: string]: unknown;
}

export interface ErrorFrame {
  type: "error";
  message: string;
}

export type ServerFrame = StateFrame | EventFrame | ErrorFrame;

function isPhase(value: unknown): value is Phase {
  return value === "I" || value === "II" || value === "III";
}

export function parseFrame(text: string): ServerFrame | null {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) {
    return null;
  }
  const frame = doc as Record<string, unknown>;
  switch (frame.type) {
    case "state":
      if (
        isPhase(frame.phase) &&
        typeof frame.tick === "number" &&
        Array.isArray(frame.robots) &&
        Array.isArray(frame.obstacles)
      ) {
        return frame as unknown as StateFrame;
      }
      return null;
    case "event":
      return typeof frame.kind === "string"
        ? (frame as unknown as EventFrame)
        : null;
    case "error":
      return typeof frame.message === "string"
        ? (frame as unknown as ErrorFrame)
        : null;
    default:
      return null;
  }
}

export function startPhaseMessage(phase: Phase): string {
  return JSON.stringify({ type: "start_phase", phase });
}

export function controlMessage(u: number): string {
  return JSON.stringify({ type: "control", u });
}

export function interveneMessage(): string {
  return JSON.stringify({ type: "intervene" });
}

export function removeMessage(obstacleId: number): string {
  return JSON.stringify({ type: "remove", obstacle_id: obstacleId });
}
