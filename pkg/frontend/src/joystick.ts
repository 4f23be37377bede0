// Pointer joystick: normalized deflection inside a circular well maps to
// (vx, vy) within vmax. Messages stream at most 30 per second while engaged;
// release snaps to zero and that zero command bypasses the rate limiter so
// the stop is immediate.

import type { CommandMessage } from "./protocol";

export const COMMAND_RATE_HZ = 30;

export interface JoystickState {
  engaged: boolean;
  // normalized deflection in [-1, 1]^2, magnitude clamped to 1
  nx: number;
  ny: number;
}

/** Screen deflection -> normalized stick state (north = +x robot frame). */
export function deflectionToStick(
  dxPixels: number,
  dyPixels: number,
  radiusPixels: number,
): JoystickState {
  let nx = -dyPixels / radiusPixels; // up on screen = forward
  let ny = -dxPixels / radiusPixels; // left on screen = +y (to the robot's left)
  const mag = Math.hypot(nx, ny);
  if (mag > 1) {
    nx /= mag;
    ny /= mag;
  }
  return { engaged: true, nx, ny };
}

export function stickToVelocity(stick: JoystickState, vmax: number): [number, number] {
  if (!stick.engaged) return [0, 0];
  // + 0 folds a signed zero from the deflection math into plain zero
  return [stick.nx * vmax + 0, stick.ny * vmax + 0];
}

export class CommandStream {
  private seq = 0;
  private lastSent = -Infinity;
  private readonly minInterval: number;

  constructor(
    private readonly vmax: number,
    private readonly send: (msg: CommandMessage) => void,
    private readonly now: () => number = () => performance.now(),
    rateHz: number = COMMAND_RATE_HZ,
  ) {
    this.minInterval = 1000 / rateHz;
  }

  /** Called on every pointer move while engaged; rate-limited to 30 Hz. */
  update(stick: JoystickState): boolean {
    const t = this.now();
    if (t - this.lastSent < this.minInterval) return false;
    this.emit(stickToVelocity(stick, this.vmax), t);
    return true;
  }

  /** Release: an immediate zero command, not subject to the rate limit. */
  release(): void {
    this.emit([0, 0], this.now());
  }

  private emit([vx, vy]: [number, number], t: number): void {
    this.seq += 1;
    this.lastSent = t;
    this.send({
      type: "cmd_vel",
      vx: clamp(vx, this.vmax),
      vy: clamp(vy, this.vmax),
      seq: this.seq,
      t_client: t / 1000,
    });
  }
}

function clamp(v: number, limit: number): number {
  return Math.min(Math.max(v, -limit), limit);
}
