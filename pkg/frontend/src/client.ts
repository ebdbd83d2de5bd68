// Thin websocket wrapper: sends client actions, parses inbound frames and
// feeds them to a subscriber in arrival order.

import type { ClientAction, PolicyId, ServerFrame } from "./protocol.js";
import { parseFrame } from "./protocol.js";

export class SessionClient {
  private ws: WebSocket | null = null;

  constructor(
    private readonly url: string,
    private readonly onFrame: (frame: ServerFrame) => void,
    private readonly onConnection: (state: "open" | "closed") => void,
  ) {}

  connect(): void {
    this.ws = new WebSocket(this.url);
    this.ws.onopen = () => {
      this.onConnection("open");
      this.sendRaw({ type: "hello" });
    };
    this.ws.onmessage = (event) => this.onFrame(parseFrame(event.data));
    this.ws.onclose = () => this.onConnection("closed");
    this.ws.onerror = () => this.onConnection("closed");
  }

  start(policy: PolicyId): void {
    this.sendRaw({ type: "start", policy });
  }

  act(action: ClientAction): void {
    this.sendRaw({ type: action });
  }

  private sendRaw(obj: Record<string, unknown>): void {
    if (this.ws && this.ws.readyState === WebSocket.OPEN) {
      this.ws.send(JSON.stringify(obj));
    }
  }
}
