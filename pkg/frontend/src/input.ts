import {
  Phase,
  controlMessage,
  interveneMessage,
} from "./protocol.js";

// Maps raw key events to outgoing messages for the active phase.
//
// Phase I drives with held arrow keys: left turns counter-clockwise
// (positive rate), right clockwise, both at once cancel.  A message is
// produced only when the commanded rate actually changes, so key
// auto-repeat stays silent.  Phase II sends one intervention per space
// press.  Phase III is mouse-only.
export class KeyboardController {
  private left = false;
  private right = false;
  private lastSent = 0;

  constructor(private readonly omegaMax: number) {}

  reset(): void {
    this.left = false;
    this.right = false;
    this.lastSent = 0;
  }

  current(): number {
    return (
      (this.left ? this.omegaMax : 0) + (this.right ? -this.omegaMax : 0)
    );
  }

  handle(phase: Phase, type: "keydown" | "keyup", key: string): string | null {
    if (phase === "I") {
      if (key === "ArrowLeft") {
        this.left = type === "keydown";
      } else if (key === "ArrowRight") {
        this.right = type === "keydown";
      } else {
        return null;
      }
      const u = this.current();
      if (u === this.lastSent) {
        return null;
      }
      this.lastSent = u;
      return controlMessage(u);
    }
    if (phase === "II" && type === "keydown" && key === " ") {
      return interveneMessage();
    }
    return null;
  }
}
