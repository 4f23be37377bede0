// Panel wiring: canvas scene, pointer joystick, terrain editor sidebar,
// heatmap overlay, reconnect control. Single-threaded event loop; rendering
// happens on requestAnimationFrame with whatever the latest frame is.

import { Connection } from "./connection";
import { TerrainDraft } from "./editor";
import { CommandStream, deflectionToStick, type JoystickState } from "./joystick";
import type { FieldGridFrame } from "./protocol";
import {
  drawScene,
  fitViewport,
  screenToWorld,
  worldToScreen,
  type SceneState,
  type Viewport,
} from "./render";

const params = new URLSearchParams(location.search);
const defaultUrl = `ws://${location.hostname || "127.0.0.1"}:${params.get("port") ?? "8571"}`;
const url = params.get("url") ?? defaultUrl;

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const joyCanvas = document.getElementById("joystick") as HTMLCanvasElement;
const joyCtx = joyCanvas.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const applyBtn = document.getElementById("apply") as HTMLButtonElement;
const reasonEl = document.getElementById("reason")!;
const patchListEl = document.getElementById("patches")!;
const heightInput = document.getElementById("height") as HTMLInputElement;
const frictionInput = document.getElementById("friction") as HTMLInputElement;
const addPatchBtn = document.getElementById("add-patch") as HTMLButtonElement;
const deletePatchBtn = document.getElementById("delete-patch") as HTMLButtonElement;
const heatmapToggle = document.getElementById("heatmap") as HTMLInputElement;
const reconnectBtn = document.getElementById("reconnect") as HTMLButtonElement;

const conn = new Connection(url);
const draft = new TerrainDraft();
let heatmap: FieldGridFrame | null = null;
let selectedPatch: string | null = null;
let editSeq = 1000;
let fieldSeq = 5000;
let stick: JoystickState = { engaged: false, nx: 0, ny: 0 };
const commands = new CommandStream(1.0, (msg) => conn.send(msg));

conn.onFrame = (frame) => {
  if (frame.type === "telemetry" && frame.resync && frame.terrain) {
    draft.loadFrom(frame.terrain);
    refreshPatchList();
    requestHeatmap();
  } else if (frame.type === "field_grid") {
    heatmap = frame;
  } else if (frame.type === "ack" && frame.kind === "terrain") {
    statusEl.textContent = `terrain applied (seq ${frame.seq}${frame.noop ? ", no-op" : ""})`;
  }
};
conn.connect();
reconnectBtn.onclick = () => conn.connect();

function requestHeatmap(): void {
  if (!heatmapToggle.checked || !conn.session.terrain) return;
  const t = conn.session.terrain;
  let xmin = Infinity, xmax = -Infinity, ymin = Infinity, ymax = -Infinity;
  for (const p of t.patches) {
    for (const [x, y] of p.vertices) {
      xmin = Math.min(xmin, x); xmax = Math.max(xmax, x);
      ymin = Math.min(ymin, y); ymax = Math.max(ymax, y);
    }
  }
  fieldSeq += 1;
  conn.send({
    type: "field_request",
    bbox: [xmin - 0.5, ymin - 0.5, xmax + 0.5, ymax + 0.5],
    resolution: Math.max((xmax - xmin + 1) / 120, 0.02),
    seq: fieldSeq,
  });
}
heatmapToggle.onchange = requestHeatmap;

// --- terrain editor -----------------------------------------------------------

function refreshPatchList(): void {
  patchListEl.innerHTML = "";
  for (const p of draft.patches) {
    const li = document.createElement("li");
    li.textContent = `${p.id} (h=${p.height.toFixed(2)}, mu=${p.friction.toFixed(2)})`;
    li.className = p.id === selectedPatch ? "selected" : "";
    li.onclick = () => selectPatch(p.id);
    patchListEl.appendChild(li);
  }
  const check = draft.validate();
  applyBtn.disabled = !check.valid || !draft.dirty;
  reasonEl.textContent = check.valid
    ? check.warnings.join("; ")
    : check.errors.join("; ");
}

function selectPatch(id: string | null): void {
  selectedPatch = id;
  const p = id ? draft.patch(id) : undefined;
  heightInput.value = p ? String(p.height) : "";
  frictionInput.value = p ? String(p.friction) : "";
  refreshPatchList();
}

heightInput.onchange = () => {
  if (selectedPatch) draft.setHeight(selectedPatch, parseFloat(heightInput.value));
  refreshPatchList();
};
frictionInput.onchange = () => {
  if (selectedPatch) draft.setFriction(selectedPatch, parseFloat(frictionInput.value));
  refreshPatchList();
};
addPatchBtn.onclick = () => {
  const view = currentView();
  const p = draft.addPatch(screenToWorld(view, canvas.width / 2, canvas.height / 2));
  selectPatch(p.id);
};
deletePatchBtn.onclick = () => {
  if (selectedPatch) draft.deletePatch(selectedPatch);
  selectPatch(null);
};
applyBtn.onclick = () => {
  editSeq += 1;
  const msg = draft.buildMessage(editSeq);
  if (msg && conn.send(msg)) {
    conn.session.terrain = { version: 1, patches: msg.patches };
    draft.dirty = false;
    refreshPatchList();
    requestHeatmap();
  }
};

// drag patches / vertices on the main canvas
let dragging: { id: string; vertex: number | null; lastWorld: [number, number] } | null = null;

canvas.addEventListener("pointerdown", (ev) => {
  const view = currentView();
  const world = screenToWorld(view, ev.offsetX, ev.offsetY);
  for (const p of draft.patches) {
    for (let i = 0; i < p.vertices.length; i++) {
      const [px, py] = worldToScreen(view, p.vertices[i][0], p.vertices[i][1]);
      if (Math.hypot(px - ev.offsetX, py - ev.offsetY) < 8) {
        dragging = { id: p.id, vertex: i, lastWorld: world };
        selectPatch(p.id);
        return;
      }
    }
  }
  for (const p of draft.patches) {
    if (pointInPolygon(world, p.vertices)) {
      dragging = { id: p.id, vertex: null, lastWorld: world };
      selectPatch(p.id);
      return;
    }
  }
  selectPatch(null);
});
canvas.addEventListener("pointermove", (ev) => {
  if (!dragging) return;
  const view = currentView();
  const world = screenToWorld(view, ev.offsetX, ev.offsetY);
  if (dragging.vertex != null) {
    draft.moveVertex(dragging.id, dragging.vertex, world);
  } else {
    draft.movePatch(dragging.id, world[0] - dragging.lastWorld[0], world[1] - dragging.lastWorld[1]);
    dragging.lastWorld = world;
  }
  refreshPatchList();
});
canvas.addEventListener("pointerup", () => (dragging = null));
canvas.addEventListener("dblclick", (ev) => {
  if (!selectedPatch) return;
  const view = currentView();
  const p = draft.patch(selectedPatch);
  if (!p) return;
  draft.addVertex(selectedPatch, p.vertices.length - 1, screenToWorld(view, ev.offsetX, ev.offsetY));
  refreshPatchList();
});

function pointInPolygon(p: [number, number], vertices: [number, number][]): boolean {
  let inside = false;
  for (let i = 0, j = vertices.length - 1; i < vertices.length; j = i++) {
    const [xi, yi] = vertices[i];
    const [xj, yj] = vertices[j];
    if (yi > p[1] !== yj > p[1] && p[0] < ((xj - xi) * (p[1] - yi)) / (yj - yi) + xi) {
      inside = !inside;
    }
  }
  return inside;
}

// --- joystick -------------------------------------------------------------------

const JOY_RADIUS = 60;
joyCanvas.addEventListener("pointerdown", (ev) => {
  joyCanvas.setPointerCapture(ev.pointerId);
  updateStick(ev);
});
joyCanvas.addEventListener("pointermove", (ev) => {
  if (stick.engaged) updateStick(ev);
});
const releaseStick = () => {
  stick = { engaged: false, nx: 0, ny: 0 };
  commands.release();
};
joyCanvas.addEventListener("pointerup", releaseStick);
joyCanvas.addEventListener("pointercancel", releaseStick);

function updateStick(ev: PointerEvent): void {
  const dx = ev.offsetX - joyCanvas.width / 2;
  const dy = ev.offsetY - joyCanvas.height / 2;
  stick = deflectionToStick(dx, dy, JOY_RADIUS);
  commands.update(stick);
}

// --- render loop ------------------------------------------------------------------

function currentView(): Viewport {
  return fitViewport(conn.session.terrain, canvas.width, canvas.height);
}

function renderLoop(): void {
  const view = currentView();
  const scene: SceneState = {
    terrain: { version: 1, patches: draft.patches },
    frame: conn.session.latestFrame,
    heatmap,
    showHeatmap: heatmapToggle.checked,
    staleSeconds: conn.staleness(),
    connected: conn.session.connected,
    selectedPatch,
  };
  drawScene(ctx, view, scene);
  drawJoystick();
  const f = conn.session.latestFrame;
  if (f && f.t != null && conn.session.connected) {
    statusEl.textContent =
      `t=${f.t.toFixed(2)}s solve=${(f.solve_ms ?? 0).toFixed(1)}ms ` +
      `drops=${conn.session.drops}${f.degraded ? " DEGRADED" : ""}` +
      (conn.session.lastError ? ` | ${conn.session.lastError}` : "");
  }
  requestAnimationFrame(renderLoop);
}

function drawJoystick(): void {
  const w = joyCanvas.width;
  joyCtx.clearRect(0, 0, w, w);
  joyCtx.beginPath();
  joyCtx.arc(w / 2, w / 2, JOY_RADIUS, 0, 2 * Math.PI);
  joyCtx.strokeStyle = "#555";
  joyCtx.stroke();
  const kx = w / 2 - stick.ny * JOY_RADIUS;
  const ky = w / 2 - stick.nx * JOY_RADIUS;
  joyCtx.beginPath();
  joyCtx.arc(kx, ky, 12, 0, 2 * Math.PI);
  joyCtx.fillStyle = stick.engaged ? "#edc948" : "#777";
  joyCtx.fill();
}

refreshPatchList();
requestAnimationFrame(renderLoop);
