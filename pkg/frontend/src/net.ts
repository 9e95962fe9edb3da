import { ServerFrame, parseFrame } from "./protocol.js";

// Thin client around a websocket: parses incoming frames and hands them
// to a single callback.  The socket is injected so tests can drive the
// pump without a network.

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((event: { data: unknown }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
}

export interface SessionCallbacks {
  onFrame: (frame: ServerFrame) => void;
  onOpen?: () => void;
  onClose?: () => void;
}

export class SessionClient {
  private readonly socket: SocketLike;

  constructor(
    url: string,
    callbacks: SessionCallbacks,
    socketFactory: (url: string) => SocketLike = (u) =>
      new WebSocket(u) as unknown as SocketLike,
  ) {
    this.socket = socketFactory(url);
    this.socket.onopen = () => callbacks.onOpen?.();
    this.socket.onclose = () => callbacks.onClose?.();
    this.socket.onmessage = (event) => {
      if (typeof event.data !== "string") {
        return;
      }
      const frame = parseFrame(event.data);
      if (frame !== null) {
        callbacks.onFrame(frame);
      }
    };
  }

  send(message: string): void {
    this.socket.send(message);
  }

  close(): void {
    this.socket.close();
  }
}
