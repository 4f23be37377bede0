// WebSocket connection to the teleoperation service: latest-frame-wins
// telemetry, resync handling, and a reconnect hook. Network I/O is fully
// asynchronous; consumers read the session fields on their render tick.

import type { ClientMessage, ServerFrame, TelemetryFrame, TerrainPayload } from "./protocol";
import { parseServerFrame } from "./protocol";

export interface UiSession {
  connected: boolean;
  latestFrame: TelemetryFrame | null;
  lastFrameAt: number; // ms timestamp of the latest live frame
  terrain: TerrainPayload | null;
  vmax: number;
  drops: number;
  lastError: string | null;
}

export class Connection {
  session: UiSession = {
    connected: false,
    latestFrame: null,
    lastFrameAt: 0,
    terrain: null,
    vmax: 1.0,
    drops: 0,
    lastError: null,
  };
  onFrame: ((frame: ServerFrame) => void) | null = null;
  private ws: WebSocket | null = null;

  constructor(
    private readonly url: string,
    private readonly now: () => number = () => performance.now(),
  ) {}

  connect(): void {
    this.disconnect();
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.session.connected = true;
      this.session.lastError = null;
    };
    ws.onclose = () => {
      this.session.connected = false;
    };
    ws.onerror = () => {
      this.session.connected = false;
      this.session.lastError = "socket error";
    };
    ws.onmessage = (event: MessageEvent) => {
      const frame = parseServerFrame(String(event.data));
      if (frame) this.handle(frame);
    };
  }

  disconnect(): void {
    if (this.ws) {
      try {
        this.ws.close();
      } catch {
        // already closed
      }
      this.ws = null;
    }
    this.session.connected = false;
  }

  send(msg: ClientMessage): boolean {
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) return false;
    this.ws.send(JSON.stringify(msg));
    return true;
  }

  /** Seconds since the last live telemetry frame. */
  staleness(): number {
    if (!this.session.lastFrameAt) return Infinity;
    return (this.now() - this.session.lastFrameAt) / 1000;
  }

  handle(frame: ServerFrame): void {
    if (frame.type === "telemetry") {
      if (frame.resync && frame.terrain) {
        this.session.terrain = frame.terrain;
        if (frame.vmax) this.session.vmax = frame.vmax;
      }
      if (frame.t != null) {
        this.session.latestFrame = frame; // latest wins
        this.session.lastFrameAt = this.now();
        if (typeof frame.drops === "number") this.session.drops = frame.drops;
      }
    } else if (frame.type === "error") {
      this.session.lastError = frame.message;
    }
    this.onFrame?.(frame);
  }
}
