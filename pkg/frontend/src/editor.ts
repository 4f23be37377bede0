// Terrain draft editing: add/move/delete vertices and patches, set height and
// friction. The draft is only transmitted on an explicit apply, as a full
// replacement payload. Client-side validation mirrors the service's polygon
// rules so an invalid draft disables apply with a reason instead of a round
// trip.

import type { PatchPayload, TerrainPayload, TerrainUpdateMessage } from "./protocol";

export interface DraftPatch {
  id: string;
  vertices: [number, number][];
  height: number;
  friction: number;
}

export interface ValidationResult {
  valid: boolean;
  errors: string[];
  warnings: string[];
}

const EDGE_TOL = 1e-9;

export function signedArea(vertices: [number, number][]): number {
  let area = 0;
  const n = vertices.length;
  for (let i = 0; i < n; i++) {
    const [x0, y0] = vertices[i];
    const [x1, y1] = vertices[(i + 1) % n];
    area += x0 * y1 - x1 * y0;
  }
  return area / 2;
}

export function validatePatch(patch: DraftPatch): ValidationResult {
  const errors: string[] = [];
  const warnings: string[] = [];
  const v = patch.vertices;
  if (v.length < 3) {
    errors.push(`${patch.id}: needs at least 3 vertices (has ${v.length})`);
  }
  for (const [x, y] of v) {
    if (!Number.isFinite(x) || !Number.isFinite(y)) {
      errors.push(`${patch.id}: non-finite vertex`);
      break;
    }
  }
  for (let i = 0; i < v.length && v.length >= 3; i++) {
    const [x0, y0] = v[i];
    const [x1, y1] = v[(i + 1) % v.length];
    if (Math.hypot(x1 - x0, y1 - y0) < EDGE_TOL) {
      errors.push(`${patch.id}: duplicate consecutive vertices at index ${i}`);
    }
  }
  if (v.length >= 3 && errors.length === 0) {
    const area = signedArea(v);
    if (area === 0) {
      errors.push(`${patch.id}: zero area`);
    } else if (area < 0) {
      warnings.push(`${patch.id}: clockwise orientation (inside test assumes CCW)`);
    }
  }
  if (!(patch.friction > 0 && patch.friction <= 2)) {
    errors.push(`${patch.id}: friction must be in (0, 2]`);
  }
  if (!Number.isFinite(patch.height)) {
    errors.push(`${patch.id}: height must be finite`);
  }
  return { valid: errors.length === 0, errors, warnings };
}

export function validateDraft(patches: DraftPatch[]): ValidationResult {
  const errors: string[] = [];
  const warnings: string[] = [];
  if (patches.length === 0) {
    errors.push("terrain needs at least one patch");
  }
  const ids = new Set<string>();
  for (const patch of patches) {
    if (ids.has(patch.id)) errors.push(`duplicate patch id ${patch.id}`);
    ids.add(patch.id);
    const r = validatePatch(patch);
    errors.push(...r.errors);
    warnings.push(...r.warnings);
  }
  return { valid: errors.length === 0, errors, warnings };
}

/** Editable terrain draft; every mutation returns whether it was applied. */
export class TerrainDraft {
  patches: DraftPatch[] = [];
  dirty = false;

  loadFrom(terrain: TerrainPayload): void {
    this.patches = terrain.patches.map((p) => ({
      id: p.id,
      vertices: p.vertices.map(([x, y]) => [x, y] as [number, number]),
      height: p.height,
      friction: p.friction,
    }));
    this.dirty = false;
  }

  patch(id: string): DraftPatch | undefined {
    return this.patches.find((p) => p.id === id);
  }

  addPatch(at: [number, number], halfSize = 0.25): DraftPatch {
    let n = this.patches.length;
    let id = `patch${n}`;
    while (this.patch(id)) id = `patch${++n}`;
    const [cx, cy] = at;
    const p: DraftPatch = {
      id,
      vertices: [
        [cx - halfSize, cy - halfSize],
        [cx + halfSize, cy - halfSize],
        [cx + halfSize, cy + halfSize],
        [cx - halfSize, cy + halfSize],
      ],
      height: 0,
      friction: 1,
    };
    this.patches.push(p);
    this.dirty = true;
    return p;
  }

  deletePatch(id: string): boolean {
    const before = this.patches.length;
    this.patches = this.patches.filter((p) => p.id !== id);
    this.dirty ||= this.patches.length !== before;
    return this.patches.length !== before;
  }

  movePatch(id: string, dx: number, dy: number): boolean {
    const p = this.patch(id);
    if (!p) return false;
    p.vertices = p.vertices.map(([x, y]) => [x + dx, y + dy] as [number, number]);
    this.dirty = true;
    return true;
  }

  moveVertex(id: string, index: number, to: [number, number]): boolean {
    const p = this.patch(id);
    if (!p || index < 0 || index >= p.vertices.length) return false;
    p.vertices[index] = [to[0], to[1]];
    this.dirty = true;
    return true;
  }

  addVertex(id: string, afterIndex: number, at: [number, number]): boolean {
    const p = this.patch(id);
    if (!p) return false;
    p.vertices.splice(afterIndex + 1, 0, [at[0], at[1]]);
    this.dirty = true;
    return true;
  }

  deleteVertex(id: string, index: number): boolean {
    const p = this.patch(id);
    if (!p || p.vertices.length <= 3) return false; // would degenerate
    p.vertices.splice(index, 1);
    this.dirty = true;
    return true;
  }

  setHeight(id: string, height: number): boolean {
    const p = this.patch(id);
    if (!p) return false;
    p.height = height;
    this.dirty = true;
    return true;
  }

  setFriction(id: string, friction: number): boolean {
    const p = this.patch(id);
    if (!p) return false;
    p.friction = friction;
    this.dirty = true;
    return true;
  }

  validate(): ValidationResult {
    return validateDraft(this.patches);
  }

  /** Full-replacement payload; null (with reasons via validate) when invalid. */
  buildMessage(seq: number): TerrainUpdateMessage | null {
    if (!this.validate().valid) return null;
    const patches: PatchPayload[] = this.patches.map((p) => ({
      id: p.id,
      vertices: p.vertices.map(([x, y]) => [x, y] as [number, number]),
      height: p.height,
      friction: p.friction,
    }));
    return { type: "terrain", patches, seq };
  }
}
