"""Reduced hybrid locomotion model.

A point-mass base with kinematic point feet stands in for full articulated
dynamics: stance feet exert 3D contact forces on the base and stay pinned,
swing feet follow commanded velocities, and a contact-gain transition snaps
the landing foot to its assigned surface height without transferring any
impulse to the base (feet are massless).

Joint torque limits are replaced by a torque proxy: the moment of a stance
foot's contact force about its hip. This is the central modeling
simplification of the reduced model and is labeled as such wherever it
surfaces in logs and docs.

The control vector of a node stacks one 3-vector per foot; its meaning
(force vs. velocity command) follows the node's stance flags.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

GRAVITY = 9.81


@dataclass(frozen=True)
class RobotParams:
    """Reduced-model robot description (mid-size quadruped proportions, not measured data)."""

    mass: float = 30.0
    gravity: float = GRAVITY
    hip_offsets: tuple[tuple[float, float, float], ...] = (
        (0.3, 0.2, 0.0),  # left front
        (0.3, -0.2, 0.0),  # right front
        (-0.3, 0.2, 0.0),  # left hind
        (-0.3, -0.2, 0.0),  # right hind
    )
    nominal_height: float = 0.5
    apex_clearance: float = 0.08

    def __post_init__(self) -> None:
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        offs = {tuple(o) for o in self.hip_offsets}
        if len(offs) != len(self.hip_offsets):
            raise ValueError("hip offsets must be distinct")

    @property
    def n_feet(self) -> int:
        return len(self.hip_offsets)

    def hips(self, r: np.ndarray) -> np.ndarray:
        """World-frame hip positions for base position r; no base rotation in this model."""
        return np.asarray(r, dtype=float)[None, :] + np.asarray(self.hip_offsets, dtype=float)


@dataclass(frozen=True)
class ReducedState:
    """Base position/velocity plus per-foot world positions."""

    r: np.ndarray  # (3,)
    rdot: np.ndarray  # (3,)
    feet: np.ndarray  # (n_feet, 3)

    def __post_init__(self) -> None:
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float).reshape(3))
        object.__setattr__(self, "rdot", np.asarray(self.rdot, dtype=float).reshape(3))
        object.__setattr__(self, "feet", np.asarray(self.feet, dtype=float).reshape(-1, 3))

    @property
    def n_feet(self) -> int:
        return self.feet.shape[0]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.rdot, self.feet.ravel()])

    @staticmethod
    def from_vector(x: np.ndarray, n_feet: int) -> "ReducedState":
        x = np.asarray(x, dtype=float)
        return ReducedState(x[0:3], x[3:6], x[6 : 6 + 3 * n_feet].reshape(n_feet, 3))

    @staticmethod
    def dim(n_feet: int) -> int:
        return 6 + 3 * n_feet


@dataclass(frozen=True)
class ControlInput:
    """Stacked per-foot 3-vectors: stance feet carry forces (N), swing feet
    carry velocity commands (m/s). Interpretation follows stance flags."""

    per_foot: np.ndarray  # (n_feet, 3)
    stance: tuple[bool, ...]

    def __post_init__(self) -> None:
        arr = np.asarray(self.per_foot, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "per_foot", arr)
        if arr.shape[0] != len(self.stance):
            raise ValueError("control rows must match the stance pattern length")

    def force(self, i: int) -> np.ndarray:
        if not self.stance[i]:
            raise ValueError(f"foot {i} is swing; it has no contact force")
        return self.per_foot[i]

    def swing_velocity(self, i: int) -> np.ndarray:
        if self.stance[i]:
            raise ValueError(f"foot {i} is stance; it has no velocity command")
        return self.per_foot[i]

    def to_vector(self) -> np.ndarray:
        return self.per_foot.ravel()


@dataclass(frozen=True)
class GaitPhase:
    duration: float
    stance: tuple[bool, ...]

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("phase duration must be positive")


@dataclass(frozen=True)
class GaitSchedule:
    """Cyclic stance/swing schedule. The gait is an input, never optimized."""

    phases: tuple[GaitPhase, ...]
    name: str = "custom"

    def __post_init__(self) -> None:
        if not self.phases:
            raise ValueError("gait needs at least one phase")
        n = len(self.phases[0].stance)
        if any(len(ph.stance) != n for ph in self.phases):
            raise ValueError("all phases must cover the same feet")

    @property
    def n_feet(self) -> int:
        return len(self.phases[0].stance)

    @property
    def cycle_duration(self) -> float:
        return sum(ph.duration for ph in self.phases)

    def _phase_index(self, t: float) -> tuple[int, float]:
        """Phase index and time into that phase for absolute time t (cyclic)."""
        tau = t % self.cycle_duration
        # modulo of a time sitting exactly on a cycle boundary can come out a
        # few ulps below the full cycle; that instant belongs to phase 0. The
        # window stays well below the 1e-9 probes used around transitions.
        if self.cycle_duration - tau < 1e-10:
            tau = 0.0
        for i, ph in enumerate(self.phases):
            if tau < ph.duration - 1e-12:
                return i, tau
            tau -= ph.duration
        return 0, 0.0

    def stance_at(self, t: float) -> tuple[bool, ...]:
        i, _ = self._phase_index(t)
        return self.phases[i].stance

    def transitions_in(self, t0: float, t1: float) -> list[float]:
        """Phase-boundary times in (t0, t1], ascending."""
        if t1 <= t0:
            return []
        cycle = self.cycle_duration
        starts = np.cumsum([0.0] + [ph.duration for ph in self.phases])[:-1]
        k0 = int(np.floor(t0 / cycle))
        out = []
        k = k0
        while k * cycle <= t1:
            for s in starts:
                tt = k * cycle + s
                if t0 < tt <= t1 + 1e-12:
                    out.append(tt)
            k += 1
        return out

    def swing_interval(self, t: float, foot: int) -> tuple[float, float]:
        """(liftoff time, touchdown time) of the swing containing time t for a
        foot currently in swing. Raises if the foot is in stance at t."""
        if self.stance_at(t)[foot]:
            raise ValueError(f"foot {foot} is in stance at t={t}")
        cycle = self.cycle_duration
        i, tau = self._phase_index(t)
        start = t - tau
        # scan back to the liftoff
        j = i
        while not self.phases[j].stance[foot]:
            j -= 1
            start -= self.phases[j % len(self.phases)].duration
            if j < 0:
                j += len(self.phases)
            if t - start > 2 * cycle:
                raise ValueError(f"foot {foot} never in stance")
        liftoff = start + self.phases[j].duration
        # scan forward to the touchdown
        end = t - tau + self.phases[i].duration
        j = (i + 1) % len(self.phases)
        while not self.phases[j].stance[foot]:
            end += self.phases[j].duration
            j = (j + 1) % len(self.phases)
            if end - liftoff > 2 * cycle:
                raise ValueError(f"foot {foot} never lands")
        return liftoff, end


def make_gait(preset: str, cycle_duration: float, n_feet: int = 4) -> GaitSchedule:
    """Named gait presets over a cycle: walk (one swing foot at a time),
    trot (diagonal pairs), pace (lateral pairs), jump (full flight phase),
    stand (all feet down)."""
    if n_feet != 4 and preset != "stand":
        raise ValueError(f"{preset} preset is defined for 4 feet")
    T = float(cycle_duration)

    def ph(duration, swinging):
        stance = tuple(i not in swinging for i in range(n_feet))
        return GaitPhase(duration, stance)

    if preset == "stand":
        return GaitSchedule((GaitPhase(T, tuple(True for _ in range(n_feet))),), "stand")
    if preset == "walk":
        q = T / 4.0
        return GaitSchedule((ph(q, {0}), ph(q, {3}), ph(q, {1}), ph(q, {2})), "walk")
    if preset == "trot":
        return GaitSchedule((ph(T / 2, {0, 3}), ph(T / 2, {1, 2})), "trot")
    if preset == "pace":
        return GaitSchedule((ph(T / 2, {0, 2}), ph(T / 2, {1, 3})), "pace")
    if preset == "jump":
        return GaitSchedule(
            (ph(0.35 * T, set()), ph(0.30 * T, {0, 1, 2, 3}), ph(0.35 * T, set())), "jump"
        )
    raise ValueError(f"unknown gait preset {preset!r}")


@dataclass(frozen=True)
class LimitSet:
    """Limits applied by the planner; the scenario can override patch friction."""

    torque_proxy_max: float | None = 40.0  # N*m; None disables the limit
    mu: float = 1.0  # scenario-level friction, combines with patch friction as min()
    f_z_min: float = 1.0  # N, per stance foot
    f_z_max: float = 600.0
    f_xy_max: float = 300.0
    reach_max: float = 0.55  # m
    swing_velocity_max: float = 4.0  # m/s per axis
    base_z_range: tuple[float, float] = (0.1, 2.0)

    def __post_init__(self) -> None:
        if self.torque_proxy_max is not None and self.torque_proxy_max <= 0:
            raise ValueError("torque_proxy_max must be positive (or None to disable)")
        if self.f_z_max < self.f_z_min:
            raise ValueError("f_z bounds out of order")
        if self.mu <= 0:
            raise ValueError("mu must be positive")


@dataclass(frozen=True)
class CostWeights:
    """Weights of the running cost: velocity tracking (w_r), surface penalty
    (w_f), and the posture/velocity/control/force regularizers."""

    w_r: float = 10.0
    w_f: float = 1e3
    q_base_z: float = 1.0
    q_foot_xy: float = 1.0
    n_velocity: float = 0.1
    r_swing: float = 1e-4
    k_force: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("w_r", "w_f", "q_base_z", "q_foot_xy", "n_velocity", "r_swing", "k_force"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def continuous_dynamics(
    state: ReducedState,
    control: np.ndarray,
    stance: tuple[bool, ...],
    params: RobotParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time derivative (r_dot, r_ddot, feet_dot) of the reduced model.

    Base acceleration is the stance-force sum over mass minus gravity; stance
    feet are pinned (zero velocity) and swing feet move at their commanded
    velocity.
    """
    u = np.asarray(control, dtype=float).reshape(-1, 3)
    if u.shape[0] != len(stance):
        raise ValueError("control rows must match stance flags")
    stance_mask = np.asarray(stance, dtype=bool)
    total_force = u[stance_mask].sum(axis=0) if stance_mask.any() else np.zeros(3)
    rddot = total_force / params.mass - np.array([0.0, 0.0, params.gravity])
    feet_dot = np.where(stance_mask[:, None], 0.0, u)
    return state.rdot.copy(), rddot, feet_dot


def step(
    state: ReducedState,
    control: np.ndarray,
    dt: float,
    stance: tuple[bool, ...],
    params: RobotParams,
) -> ReducedState:
    """Semi-implicit Euler step: velocity first, then position with the updated
    velocity. Stance feet positions are unchanged for any control."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    _, rddot, feet_dot = continuous_dynamics(state, control, stance, params)
    rdot_next = state.rdot + dt * rddot
    r_next = state.r + dt * rdot_next
    feet_next = state.feet + dt * feet_dot
    return ReducedState(r_next, rdot_next, feet_next)


def touchdown_reset(state: ReducedState, foot: int, surface_height: float) -> ReducedState:
    """Contact-gain transition: snap the foot to the surface height.

    The base carries no impulse (massless feet), so only the foot's z changes;
    the operation is idempotent.
    """
    feet = state.feet.copy()
    feet[foot, 2] = surface_height
    return replace(state, feet=feet)


def torque_proxy(state: ReducedState, foot: int, force, params: RobotParams) -> float:
    """Moment of a stance foot's contact force about its hip, standing in for
    joint torque limits: ||(foot - hip) x f||."""
    hip = state.r + np.asarray(params.hip_offsets[foot], dtype=float)
    lever = state.feet[foot] - hip
    return float(np.linalg.norm(np.cross(lever, np.asarray(force, dtype=float))))


def friction_residuals(force, mu: float) -> np.ndarray:
    """Linearized friction pyramid residuals (mu*fz +- fx, mu*fz +- fy).

    All four nonnegative iff the force is inside the pyramid; fz >= 0 is
    enforced separately through the control bounds.
    """
    f = np.asarray(force, dtype=float).reshape(3)
    return np.array(
        [
            mu * f[2] - f[0],
            mu * f[2] + f[0],
            mu * f[2] - f[1],
            mu * f[2] + f[1],
        ]
    )


def reach_residual(state: ReducedState, foot: int, params: RobotParams, reach_max: float) -> float:
    """Kinematic stand-in for leg reach: reach_max - ||foot - hip||; feasible iff >= 0."""
    hip = state.r + np.asarray(params.hip_offsets[foot], dtype=float)
    return float(reach_max - np.linalg.norm(state.feet[foot] - hip))


def _smoothstep(tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quintic smoothstep and its derivative (zero value/slope at both ends)."""
    s = tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)
    ds = 30.0 * tau**2 * (tau - 1.0) ** 2
    return s, ds


def swing_reference(
    liftoff_z: float, touchdown_z: float, clearance: float, t: float
) -> tuple[float, float]:
    """Reference vertical swing profile at phase t in [0, 1].

    Two monotone quintic halves meet at the apex max(liftoff, touchdown) +
    clearance at t = 0.5; boundary velocities vanish. Returns (z, dz/dphase);
    divide the slope by the swing duration for a velocity in m/s.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("phase must lie in [0, 1]")
    if clearance <= 0:
        raise ValueError("clearance must be positive")
    apex = max(liftoff_z, touchdown_z) + clearance
    if t <= 0.5:
        s, ds = _smoothstep(np.asarray(2.0 * t))
        return liftoff_z + (apex - liftoff_z) * float(s), (apex - liftoff_z) * float(ds) * 2.0
    s, ds = _smoothstep(np.asarray(2.0 * t - 1.0))
    return apex + (touchdown_z - apex) * float(s), (touchdown_z - apex) * float(ds) * 2.0
