import { describe, expect, it } from "vitest";

import { CommandStream, deflectionToStick, stickToVelocity } from "../src/joystick";
import type { CommandMessage } from "../src/protocol";

describe("stick geometry", () => {
  it("center maps to zero", () => {
    const s = deflectionToStick(0, 0, 60);
    expect(stickToVelocity(s, 1.0)).toEqual([0, 0]);
  });

  it("full north deflection maps to (vmax, 0)", () => {
    const s = deflectionToStick(0, -60, 60);
    const [vx, vy] = stickToVelocity(s, 0.8);
    expect(vx).toBeCloseTo(0.8, 12);
    expect(vy).toBeCloseTo(0.0, 12);
  });

  it("deflection beyond the well is normalized to magnitude vmax", () => {
    const s = deflectionToStick(-300, -400, 60);
    const [vx, vy] = stickToVelocity(s, 1.0);
    expect(Math.hypot(vx, vy)).toBeCloseTo(1.0, 9);
  });

  it("release state maps to zero regardless of deflection", () => {
    expect(stickToVelocity({ engaged: false, nx: 0.9, ny: 0.1 }, 1.0)).toEqual([0, 0]);
  });
});

describe("CommandStream", () => {
  function harness(rateHz = 30) {
    const sent: CommandMessage[] = [];
    let t = 0;
    const stream = new CommandStream(1.0, (m) => sent.push(m), () => t, rateHz);
    return { sent, stream, advance: (ms: number) => (t += ms) };
  }

  it("never exceeds 30 messages per second", () => {
    const { sent, stream, advance } = harness();
    // pointer events every 4 ms for one second: 250 updates offered
    for (let i = 0; i < 250; i++) {
      stream.update({ engaged: true, nx: 0.5, ny: 0.0 });
      advance(4);
    }
    expect(sent.length).toBeLessThanOrEqual(30);
    expect(sent.length).toBeGreaterThanOrEqual(25);
  });

  it("sequence numbers increase monotonically", () => {
    const { sent, stream, advance } = harness();
    for (let i = 0; i < 10; i++) {
      stream.update({ engaged: true, nx: 0.1, ny: 0.0 });
      advance(50);
    }
    const seqs = sent.map((m) => m.seq);
    expect(seqs).toEqual([...seqs].sort((a, b) => a - b));
    expect(new Set(seqs).size).toBe(seqs.length);
  });

  it("release sends an immediate zero command, bypassing the limiter", () => {
    const { sent, stream } = harness();
    stream.update({ engaged: true, nx: 1, ny: 0 });
    stream.release(); // no time has passed, must still go out
    expect(sent.length).toBe(2);
    expect(sent[1].vx).toBe(0);
    expect(sent[1].vy).toBe(0);
  });

  it("velocities are clamped to vmax", () => {
    const sent: CommandMessage[] = [];
    let t = 0;
    const stream = new CommandStream(0.5, (m) => sent.push(m), () => (t += 100));
    stream.update({ engaged: true, nx: 1, ny: -1 }); // magnitude sqrt(2) pre-clamp
    expect(Math.abs(sent[0].vx)).toBeLessThanOrEqual(0.5);
    expect(Math.abs(sent[0].vy)).toBeLessThanOrEqual(0.5);
  });
});
