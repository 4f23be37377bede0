// Top-down 2D canvas rendering: patches shaded by height with labels, the
// base and feet, planned touchdowns colored by patch id, and an optional
// penalty heatmap underlay. Latest-frame-wins: draw() renders whatever frame
// it is handed, there is no animation state.

import type { FieldGridFrame, TelemetryFrame, TerrainPayload } from "./protocol";

export interface Viewport {
  centerX: number;
  centerY: number;
  pixelsPerMeter: number;
  width: number;
  height: number;
}

export function worldToScreen(v: Viewport, x: number, y: number): [number, number] {
  // world +x is screen right, world +y is screen up
  return [
    v.width / 2 + (x - v.centerX) * v.pixelsPerMeter,
    v.height / 2 - (y - v.centerY) * v.pixelsPerMeter,
  ];
}

export function screenToWorld(v: Viewport, px: number, py: number): [number, number] {
  return [
    v.centerX + (px - v.width / 2) / v.pixelsPerMeter,
    v.centerY - (py - v.height / 2) / v.pixelsPerMeter,
  ];
}

export function fitViewport(
  terrain: TerrainPayload | null,
  width: number,
  height: number,
  margin = 0.5,
): Viewport {
  if (!terrain || terrain.patches.length === 0) {
    return { centerX: 0, centerY: 0, pixelsPerMeter: 100, width, height };
  }
  let xmin = Infinity;
  let xmax = -Infinity;
  let ymin = Infinity;
  let ymax = -Infinity;
  for (const p of terrain.patches) {
    for (const [x, y] of p.vertices) {
      xmin = Math.min(xmin, x);
      xmax = Math.max(xmax, x);
      ymin = Math.min(ymin, y);
      ymax = Math.max(ymax, y);
    }
  }
  const spanX = xmax - xmin + 2 * margin;
  const spanY = ymax - ymin + 2 * margin;
  return {
    centerX: (xmin + xmax) / 2,
    centerY: (ymin + ymax) / 2,
    pixelsPerMeter: Math.min(width / spanX, height / spanY),
    width,
    height,
  };
}

const PATCH_COLORS = [
  "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1",
  "#76b7b2", "#edc948", "#ff9da7", "#9c755f", "#bab0ac",
];

export function patchColor(patchId: string | null, terrain: TerrainPayload | null): string {
  if (!patchId || !terrain) return "#888888";
  const idx = terrain.patches.findIndex((p) => p.id === patchId);
  return idx >= 0 ? PATCH_COLORS[idx % PATCH_COLORS.length] : "#888888";
}

export function heightShade(height: number, hmin: number, hmax: number): string {
  const t = hmax > hmin ? (height - hmin) / (hmax - hmin) : 0.5;
  const light = 30 + 35 * t;
  return `hsl(210, 18%, ${light.toFixed(0)}%)`;
}

export interface SceneState {
  terrain: TerrainPayload | null;
  frame: TelemetryFrame | null;
  heatmap: FieldGridFrame | null;
  showHeatmap: boolean;
  staleSeconds: number; // time since the last live frame
  connected: boolean;
  selectedPatch: string | null;
}

export function drawScene(ctx: CanvasRenderingContext2D, view: Viewport, scene: SceneState): void {
  ctx.clearRect(0, 0, view.width, view.height);
  ctx.fillStyle = "#14161a";
  ctx.fillRect(0, 0, view.width, view.height);

  if (scene.showHeatmap && scene.heatmap) drawHeatmap(ctx, view, scene.heatmap);
  if (scene.terrain) drawTerrain(ctx, view, scene.terrain, scene.selectedPatch);
  if (scene.frame && scene.frame.t != null) drawRobot(ctx, view, scene.frame, scene.terrain);

  if (!scene.connected) {
    ctx.fillStyle = "rgba(20, 22, 26, 0.75)";
    ctx.fillRect(0, 0, view.width, view.height);
    banner(ctx, view, "disconnected — click reconnect");
  } else if (scene.staleSeconds > 1.0) {
    banner(ctx, view, `telemetry stale (${scene.staleSeconds.toFixed(1)} s)`);
  }
}

function banner(ctx: CanvasRenderingContext2D, view: Viewport, text: string): void {
  ctx.fillStyle = "#e15759";
  ctx.font = "16px system-ui, sans-serif";
  ctx.textAlign = "center";
  ctx.fillText(text, view.width / 2, 28);
  ctx.textAlign = "left";
}

function drawTerrain(
  ctx: CanvasRenderingContext2D,
  view: Viewport,
  terrain: TerrainPayload,
  selected: string | null,
): void {
  const heights = terrain.patches.map((p) => p.height);
  const hmin = Math.min(...heights);
  const hmax = Math.max(...heights);
  for (const patch of terrain.patches) {
    ctx.beginPath();
    patch.vertices.forEach(([x, y], i) => {
      const [px, py] = worldToScreen(view, x, y);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.closePath();
    ctx.fillStyle = heightShade(patch.height, hmin, hmax);
    ctx.fill();
    ctx.lineWidth = patch.id === selected ? 2.5 : 1.2;
    ctx.strokeStyle = patch.id === selected ? "#edc948" : "#dfe3e8";
    ctx.stroke();

    let cx = 0;
    let cy = 0;
    for (const [x, y] of patch.vertices) {
      cx += x;
      cy += y;
    }
    const [lx, ly] = worldToScreen(view, cx / patch.vertices.length, cy / patch.vertices.length);
    ctx.fillStyle = "#dfe3e8";
    ctx.font = "12px system-ui, sans-serif";
    ctx.fillText(`${patch.id} h=${patch.height.toFixed(2)} mu=${patch.friction.toFixed(2)}`, lx - 30, ly);
  }
}

function drawRobot(
  ctx: CanvasRenderingContext2D,
  view: Viewport,
  frame: TelemetryFrame,
  terrain: TerrainPayload | null,
): void {
  if (frame.planned) {
    for (const p of frame.planned) {
      const [px, py] = worldToScreen(view, p.x, p.y);
      ctx.beginPath();
      ctx.arc(px, py, 6, 0, 2 * Math.PI);
      ctx.strokeStyle = patchColor(p.patch, terrain);
      ctx.lineWidth = 2;
      ctx.stroke();
      if (p.penalty > 0) {
        ctx.strokeStyle = "#e15759";
        ctx.beginPath();
        ctx.moveTo(px - 4, py - 4);
        ctx.lineTo(px + 4, py + 4);
        ctx.stroke();
      }
    }
  }
  if (frame.feet && frame.stance) {
    frame.feet.forEach(([x, y], i) => {
      const [px, py] = worldToScreen(view, x, y);
      ctx.beginPath();
      ctx.arc(px, py, 5, 0, 2 * Math.PI);
      ctx.fillStyle = frame.stance![i] ? "#59a14f" : "#9ec5e8";
      ctx.fill();
    });
  }
  if (frame.r) {
    const [px, py] = worldToScreen(view, frame.r[0], frame.r[1]);
    ctx.beginPath();
    ctx.arc(px, py, 8, 0, 2 * Math.PI);
    ctx.fillStyle = frame.degraded ? "#e15759" : "#edc948";
    ctx.fill();
    if (frame.rdot) {
      ctx.beginPath();
      ctx.moveTo(px, py);
      ctx.lineTo(px + frame.rdot[0] * view.pixelsPerMeter * 0.8, py - frame.rdot[1] * view.pixelsPerMeter * 0.8);
      ctx.strokeStyle = "#edc948";
      ctx.lineWidth = 2;
      ctx.stroke();
    }
  }
}

function drawHeatmap(ctx: CanvasRenderingContext2D, view: Viewport, grid: FieldGridFrame): void {
  if (grid.xs.length < 2 || grid.ys.length < 2) return;
  const dx = grid.xs[1] - grid.xs[0];
  const dy = grid.ys[1] - grid.ys[0];
  let pmax = 0;
  for (const row of grid.penalty) for (const v of row) pmax = Math.max(pmax, v);
  if (pmax <= 0) pmax = 1;
  for (let j = 0; j < grid.ys.length; j++) {
    for (let i = 0; i < grid.xs.length; i++) {
      const v = grid.penalty[j][i];
      const [px, py] = worldToScreen(view, grid.xs[i] - dx / 2, grid.ys[j] + dy / 2);
      const w = dx * view.pixelsPerMeter + 1;
      const h = dy * view.pixelsPerMeter + 1;
      if (v === 0) {
        ctx.fillStyle = "rgba(89, 161, 79, 0.25)"; // zero-cost region
      } else {
        const t = Math.min(1, v / pmax);
        ctx.fillStyle = `rgba(225, 87, 89, ${(0.08 + 0.5 * t).toFixed(3)})`;
      }
      ctx.fillRect(px, py, w, h);
    }
  }
}
