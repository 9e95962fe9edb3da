import { KeyboardController } from "./input.js";
import { Viewport, pickObstacle, toWorld } from "./hittest.js";
import { SessionClient } from "./net.js";
import {
  Phase,
  StateFrame,
  removeMessage,
  startPhaseMessage,
} from "./protocol.js";
import { CanvasLike, drawFrame } from "./render.js";

const OMEGA_MAX = 1.0;

function param(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

function statusLine(text: string): void {
  const el = document.getElementById("status");
  if (el) {
    el.textContent = text;
  }
}

function main(): void {
  const canvas = document.getElementById("arena") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d") as unknown as CanvasLike;
  const viewport: Viewport = {
    arenaWidth: Number(param("arena_w", "80")),
    arenaHeight: Number(param("arena_h", "48")),
    canvasWidth: canvas.width,
    canvasHeight: canvas.height,
  };

  let phase: Phase = "I";
  let lastState: StateFrame | null = null;
  const keys = new KeyboardController(OMEGA_MAX);

  const url = `ws://${window.location.hostname || "127.0.0.1"}:` +
    `${param("port", "8765")}`;
  const client = new SessionClient(url, {
    onOpen: () => statusLine(`connected to ${url}`),
    onClose: () => statusLine("disconnected"),
    onFrame: (frame) => {
      if (frame.type === "state") {
        lastState = frame;
        phase = frame.phase;
        drawFrame(ctx, viewport, frame);
      } else if (frame.type === "event") {
        if (frame.kind === "phase_start") {
          keys.reset();
          statusLine(`phase ${String(frame.phase)} started`);
        } else if (frame.kind === "phase_end") {
          statusLine(`phase ended: ${JSON.stringify(frame)}`);
        }
      } else {
        statusLine(`error: ${frame.message}`);
      }
    },
  });

  for (const target of ["I", "II", "III"] as const) {
    document
      .getElementById(`phase-${target}`)
      ?.addEventListener("click", () =>
        client.send(startPhaseMessage(target)),
      );
  }

  window.addEventListener("keydown", (event) => {
    const message = keys.handle(phase, "keydown", event.key);
    if (message !== null) {
      event.preventDefault();
      client.send(message);
    }
  });
  window.addEventListener("keyup", (event) => {
    const message = keys.handle(phase, "keyup", event.key);
    if (message !== null) {
      client.send(message);
    }
  });

  canvas.addEventListener("click", (event) => {
    if (phase !== "III" || lastState === null) {
      return;
    }
    const rect = canvas.getBoundingClientRect();
    const { x, y } = toWorld(
      viewport,
      event.clientX - rect.left,
      event.clientY - rect.top,
    );
    const id = pickObstacle(lastState.obstacles, x, y);
    if (id !== null) {
      client.send(removeMessage(id));
    }
  });
}

main();
