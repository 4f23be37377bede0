// Message schemas spoken by the stepfield teleoperation service.
// One JSON object per WebSocket frame (or per newline on raw sockets).

export interface PatchPayload {
  id: string;
  vertices: [number, number][];
  height: number;
  friction: number;
}

export interface TerrainPayload {
  version: number;
  patches: PatchPayload[];
}

export interface CommandMessage {
  type: "cmd_vel";
  vx: number;
  vy: number;
  seq: number;
  t_client: number;
}

export interface TerrainUpdateMessage {
  type: "terrain";
  patches: PatchPayload[];
  seq: number;
}

export interface FieldRequestMessage {
  type: "field_request";
  bbox: [number, number, number, number];
  resolution: number;
  seq: number;
}

export interface PlannedTouchdown {
  foot: number;
  t: number;
  x: number;
  y: number;
  patch: string | null;
  penalty: number;
}

export interface TelemetryFrame {
  type: "telemetry";
  t: number | null;
  r?: [number, number, number];
  rdot?: [number, number, number];
  feet?: [number, number, number][];
  stance?: boolean[];
  planned?: PlannedTouchdown[];
  torque_proxies?: number[];
  solve_ms?: number;
  degraded?: boolean;
  drops?: number;
  resync?: boolean;
  terrain?: TerrainPayload;
  vmax?: number;
}

export interface AckFrame {
  type: "ack";
  kind: "cmd_vel" | "terrain";
  seq: number;
  superseded_seq: number;
  noop?: boolean;
}

export interface ErrorFrame {
  type: "error";
  message: string;
  kind?: string;
  seq?: number;
}

export interface FieldGridFrame {
  type: "field_grid";
  seq: number;
  xs: number[];
  ys: number[];
  penalty: number[][];
}

export type ServerFrame = TelemetryFrame | AckFrame | ErrorFrame | FieldGridFrame;
export type ClientMessage = CommandMessage | TerrainUpdateMessage | FieldRequestMessage;

export function parseServerFrame(text: string): ServerFrame | null {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const type = (doc as { type?: unknown }).type;
  if (type === "telemetry" || type === "ack" || type === "error" || type === "field_grid") {
    return doc as ServerFrame;
  }
  return null;
}
