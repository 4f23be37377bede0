"""Receding-horizon footstep planner.

Builds a discretized optimal control problem from terrain + gait + reference
velocity on the reduced model, with the contact-surface penalty attached at
stance nodes, and runs the closed-loop MPC against a simulation of the same
model.

Surface selection happens between solves, never inside one: each upcoming
stance phase is assigned the height (and friction) of the patch containing
the previous plan's touchdown location, falling back to the nearest patch by
boundary distance when the touchdown sits in a gap. The optimizer then moves
touchdown positions through the dynamics coupling of the penalty; a changed
assignment shows up in the next solve.

Constraints (friction, torque proxy, reach, swing-height tracking, base
height corridor) enter as quadratic penalties whose weights are scaled by the
solver's penalty-continuation hook; realized violations are logged, never
hidden.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from . import field as fieldmod
from .geometry import (
    PointLocation,
    Polygon2,
    TerrainModel,
    distance_to_boundary,
    nearest_boundary_point,
    point_in_polygon_raycast,
)
from .model import (
    CostWeights,
    GaitSchedule,
    LimitSet,
    ReducedState,
    RobotParams,
    step as model_step,
    swing_reference,
    torque_proxy,
    touchdown_reset,
    friction_residuals,
)
from .solver import OcpProblem, Solution, SolverSettings, solve

WINDING_SLACK = fieldmod.WINDING_SLACK


class NoSurfaces(ValueError):
    """Terrain has no patches; nothing to stand on."""


@dataclass(frozen=True)
class VelocitySegment:
    t0: float
    vx: float
    vy: float


@dataclass(frozen=True)
class MpcSettings:
    horizon: float = 0.85
    replan_rate: float = 50.0
    node_dt: float = 0.025
    solver_iterations: int = 2  # per MPC step
    offline_iterations: int = 100
    touchdown_margin: float = 0.03  # planned landings stay this far inside their patch
    friction_margin: float = 0.05  # plan against mu shrunk by this fraction
    torque_margin: float = 0.02  # plan against the torque limit shrunk by this fraction
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self) -> None:
        if self.horizon < self.node_dt:
            raise ValueError("horizon must cover at least one node")
        if self.replan_rate <= 0 or self.node_dt <= 0:
            raise ValueError("rates must be positive")

    @property
    def n_nodes(self) -> int:
        return max(1, int(round(self.horizon / self.node_dt)))

    @property
    def tick(self) -> float:
        return 1.0 / self.replan_rate


@dataclass(frozen=True)
class PenaltyWeights:
    """Quadratic-penalty weights for the nonlinear constraints (per unit rho).

    Sized so that a single solve at rho = 1 already keeps realized violations
    inside the logged tolerances; offline solves may still escalate rho."""

    friction: float = 1e2
    cone: float = 1e4
    torque: float = 1e3
    reach: float = 1e3
    swing_z_pos: float = 2e4
    swing_z_vel: float = 2e2
    base_z: float = 1e2
    margin: float = 4e3  # touchdown containment margin inside the assigned patch
    swing_land: float = 50.0  # horizontal swing-velocity taper approaching touchdown


@dataclass(frozen=True)
class Scenario:
    terrain: TerrainModel
    gait: GaitSchedule
    reference_velocity: tuple[VelocitySegment, ...]
    duration: float
    initial_state: ReducedState
    limits: LimitSet = field(default_factory=LimitSet)
    weights: CostWeights = field(default_factory=CostWeights)
    robot: RobotParams = field(default_factory=RobotParams)
    mpc: MpcSettings = field(default_factory=MpcSettings)
    penalties: PenaltyWeights = field(default_factory=PenaltyWeights)
    seed: int = 0
    disturbance_sigma: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        segs = tuple(sorted(self.reference_velocity, key=lambda s: s.t0))
        if not segs:
            segs = (VelocitySegment(0.0, 0.0, 0.0),)
        object.__setattr__(self, "reference_velocity", segs)

    def velocity_at(self, t: float) -> np.ndarray:
        vx = vy = 0.0
        for seg in self.reference_velocity:
            if t < seg.t0 - 1e-12:
                break
            vx, vy = seg.vx, seg.vy
        return np.array([vx, vy])


def validate_scenario(scenario: Scenario) -> None:
    """Checks the standing-start invariant: initial stance feet each sit inside
    some patch at that patch's height."""
    if scenario.terrain.n_patches == 0:
        raise NoSurfaces("scenario terrain has no patches")
    stance = scenario.gait.stance_at(0.0)
    for i, in_stance in enumerate(stance):
        if not in_stance:
            continue
        xy = scenario.initial_state.feet[i, :2]
        pid = select_surface(scenario.terrain, xy)
        if pid is None:
            raise ValueError(f"initial stance foot {i} at {xy} is outside every patch")
        patch = scenario.terrain.patch_by_id(pid)
        if abs(scenario.initial_state.feet[i, 2] - patch.height) > 1e-6:
            raise ValueError(
                f"initial stance foot {i} height {scenario.initial_state.feet[i, 2]} "
                f"does not match patch {pid} height {patch.height}"
            )


def standing_start(terrain: TerrainModel, robot: RobotParams, xy=(0.0, 0.0)) -> ReducedState:
    """Initial state with feet at hip projections snapped onto the terrain.

    Every foot must land inside some patch; the base sits at nominal height
    above the mean foot height.
    """
    xy = np.asarray(xy, dtype=float).reshape(2)
    r_guess = np.array([xy[0], xy[1], 0.0])
    feet = robot.hips(r_guess)
    heights = []
    for i in range(robot.n_feet):
        pid = select_surface(terrain, feet[i, :2])
        if pid is None:
            raise ValueError(f"foot {i} at {feet[i, :2]} has no patch under it")
        h = terrain.patch_by_id(pid).height
        feet[i, 2] = h
        heights.append(h)
    r = np.array([xy[0], xy[1], float(np.mean(heights)) + robot.nominal_height])
    return ReducedState(r, np.zeros(3), feet)


def select_surface(terrain: TerrainModel, xy) -> str | None:
    """Id of the first patch (ascending id) whose winding test contains xy."""
    xy = np.asarray(xy, dtype=float).reshape(2)
    for patch in terrain.sorted_patches():
        try:
            wind = fieldmod.winding_number(patch.polygon, xy)
            inside = wind >= 0.5 - WINDING_SLACK
        except fieldmod.VertexSingularity:
            inside = point_in_polygon_raycast(patch.polygon, xy) is not PointLocation.OUTSIDE
        if inside:
            return patch.id
    return None


def assign_surface_heights(
    terrain: TerrainModel, touchdowns
) -> dict[tuple[int, int], tuple[float, str]]:
    """Assign a surface (height, patch id) to each planned touchdown.

    touchdowns: iterable of (foot, time, xy). A touchdown gets the patch
    containing its xy (ascending-id tie-break); if it lies in a gap, the
    nearest patch by boundary distance. Keys are (foot, time in microseconds).
    """
    if terrain.n_patches == 0:
        raise NoSurfaces("cannot assign surface heights on empty terrain")
    out: dict[tuple[int, int], tuple[float, str]] = {}
    patches = terrain.sorted_patches()
    for foot, t, xy in touchdowns:
        pid = select_surface(terrain, xy)
        if pid is None:
            dists = [distance_to_boundary(p.polygon, xy) for p in patches]
            pid = patches[int(np.argmin(dists))].id
        patch = terrain.patch_by_id(pid)
        out[(int(foot), _tkey(t))] = (patch.height, pid)
    return out


def _tkey(t: float) -> int:
    return int(round(t * 1e6))


def _signed_margin(poly: Polygon2, p: np.ndarray) -> tuple[float, np.ndarray]:
    """Signed distance into a polygon (positive inside) and its gradient.

    The gradient points inward on both sides of the boundary and is left at
    zero exactly on it, where the direction is undefined.
    """
    q, dist = nearest_boundary_point(poly, p)
    loc = point_in_polygon_raycast(poly, p)
    sign = 1.0 if loc is PointLocation.INSIDE else -1.0
    if dist < 1e-9:
        return 0.0, np.zeros(2)
    return sign * dist, sign * (p - q) / dist


# --- per-foot surface timeline -------------------------------------------------


@dataclass
class _FootTimeline:
    """Step function of assigned (height, patch id, mu) over time for one foot.

    Entries are (touchdown time, height, patch_id, mu), ascending; the value
    holds until the next touchdown, so evaluating during a swing returns the
    liftoff surface and the next entry is the upcoming landing surface.
    """

    entries: list[tuple[float, float, str | None, float]]

    def at(self, t: float) -> tuple[float, str | None, float]:
        h, pid, mu = self.entries[0][1:]
        for tt, hh, pp, mm in self.entries:
            if tt <= t + 1e-9:
                h, pid, mu = hh, pp, mm
            else:
                break
        return h, pid, mu

    def next_after(self, t: float) -> tuple[float, str | None, float]:
        for tt, hh, pp, mm in self.entries:
            if tt > t + 1e-9:
                return hh, pp, mm
        return self.at(t)

    def touchdown_near(self, t: float, tol: float) -> tuple[float, str | None, float] | None:
        for tt, hh, pp, mm in self.entries:
            if abs(tt - t) <= tol:
                return hh, pp, mm
        return None


@dataclass
class PlanMemory:
    """Controller state carried between MPC steps."""

    last_height: dict[int, float] = field(default_factory=dict)
    last_patch: dict[int, str | None] = field(default_factory=dict)
    planned_touchdowns: dict[int, list[tuple[float, np.ndarray]]] = field(default_factory=dict)
    prev_solution: Solution | None = None
    prev_time: float | None = None
    prev_stance: np.ndarray | None = None  # (N+1, n) of the previous assembly
    timelines: dict[int, _FootTimeline] = field(default_factory=dict)


def _effective_mu(limits: LimitSet, patch_mu: float) -> float:
    return min(limits.mu, patch_mu)


def _build_timelines(
    scenario: Scenario, state: ReducedState, t_now: float, memory: PlanMemory
) -> dict[int, _FootTimeline]:
    """Predict upcoming touchdowns per foot over horizon + one gait cycle and
    assign each a surface."""
    gait = scenario.gait
    terrain = scenario.terrain
    robot = scenario.robot
    n_feet = robot.n_feet
    horizon_end = t_now + scenario.mpc.horizon + gait.cycle_duration
    vref = scenario.velocity_at(t_now)
    hips_xy = np.asarray(robot.hip_offsets, dtype=float)[:, :2]

    stance_now = gait.stance_at(t_now)
    timelines: dict[int, _FootTimeline] = {}
    requests = []  # (foot, t_td, xy) needing assignment
    for i in range(n_feet):
        if stance_now[i]:
            base_h = state.feet[i, 2]
            base_pid = memory.last_patch.get(i) or select_surface(terrain, state.feet[i, :2])
        else:
            base_h = memory.last_height.get(i, state.feet[i, 2])
            base_pid = memory.last_patch.get(i)
        base_mu = scenario.limits.mu
        if base_pid is not None:
            try:
                base_mu = _effective_mu(scenario.limits, terrain.patch_by_id(base_pid).friction)
            except KeyError:
                base_pid = select_surface(terrain, state.feet[i, :2])  # patch was edited away
                if base_pid is not None:
                    base_mu = _effective_mu(
                        scenario.limits, terrain.patch_by_id(base_pid).friction
                    )
        timelines[i] = _FootTimeline([(-np.inf, base_h, base_pid, base_mu)])

        # upcoming touchdowns: swing -> stance transitions of this foot
        prev_flags = stance_now[i]
        for tt in gait.transitions_in(t_now, horizon_end):
            flags = gait.stance_at(tt + 1e-9)
            if flags[i] and not prev_flags:
                xy = _predict_touchdown_xy(scenario, state, t_now, i, tt, vref, hips_xy, memory)
                requests.append((i, tt, xy))
            prev_flags = flags[i]

    if requests:
        assigned = assign_surface_heights(terrain, requests)
        for foot, tt, xy in requests:
            height, pid = assigned[(foot, _tkey(tt))]
            mu = _effective_mu(scenario.limits, terrain.patch_by_id(pid).friction)
            timelines[foot].entries.append((tt, height, pid, mu))
    return timelines


def _predict_touchdown_xy(scenario, state, t_now, foot, t_td, vref, hips_xy, memory):
    """Previous plan's touchdown location when one exists for this phase, else
    a hip-projection guess at mid-stance."""
    planned = memory.planned_touchdowns.get(foot, ())
    for tt, xy in planned:
        if abs(tt - t_td) <= scenario.mpc.node_dt:
            return np.asarray(xy, dtype=float)
    # crude guess: hip projection at mid-stance, advected by the reference
    try:
        liftoff, _td = scenario.gait.swing_interval(t_td - 1e-6, foot)
        stance_len = scenario.gait.cycle_duration - (_td - liftoff)
    except ValueError:
        stance_len = scenario.gait.cycle_duration / 2
    t_mid = t_td + 0.5 * max(stance_len, 0.0)
    return state.r[:2] + vref * (t_mid - t_now) + hips_xy[foot]


# --- assembled problem ---------------------------------------------------------


@dataclass
class AssemblyInfo:
    node_times: np.ndarray  # (N+1,)
    mid_times: np.ndarray  # (N,) node-center times
    stance: np.ndarray  # (N+1, n_feet) bool
    touchdown_height: np.ndarray  # (N, n_feet), nan where no touchdown after node k
    mu_eff: np.ndarray  # (N, n_feet)
    z_nominal: np.ndarray  # (N+1,)
    vref: np.ndarray  # (N+1, 2)
    zref: np.ndarray  # (N, n_feet), nan at stance entries
    zdotref: np.ndarray  # (N, n_feet)
    late_swing: np.ndarray  # (N, n_feet) landing-taper weight in [0, 1]
    timelines: dict[int, _FootTimeline]
    planned_touchdown_nodes: list[tuple[int, int, float]]  # (node k+1, foot, time)
    margin_terms: list = field(default_factory=list)  # (node, foot, Polygon2)


_dynamics_template_cache: dict = {}


def _node_dynamics_template(dt, m, g, n, stance_k, gaining):
    """Shared (A, B, c0) for one node pattern; the touchdown height only enters
    the constant term downstream, so the cache key is height-free."""
    key = (dt, m, g, n, stance_k, gaining)
    hit = _dynamics_template_cache.get(key)
    if hit is not None:
        return hit
    nx = 6 + 3 * n
    A = np.eye(nx)
    B = np.zeros((nx, 3 * n))
    c = np.zeros(nx)
    A[0:3, 3:6] = dt * np.eye(3)
    c[5] -= dt * g
    c[2] -= dt * dt * g
    for i in range(n):
        cols = slice(3 * i, 3 * i + 3)
        rows = slice(6 + 3 * i, 9 + 3 * i)
        if stance_k[i]:
            B[3:6, cols] = (dt / m) * np.eye(3)
            B[0:3, cols] = (dt * dt / m) * np.eye(3)
        else:
            B[rows, cols] = dt * np.eye(3)
        if gaining[i]:
            # contact gain: snap the foot to its assigned height
            z_row = 6 + 3 * i + 2
            A[z_row, :] = 0.0
            B[z_row, :] = 0.0
    A.setflags(write=False)
    B.setflags(write=False)
    c.setflags(write=False)
    _dynamics_template_cache[key] = (A, B, c)
    return A, B, c


class _ReducedDynamics:
    """Per-node affine dynamics of the reduced model, with touchdown resets
    folded into the node where contact is gained."""

    def __init__(self, scenario: Scenario, info: AssemblyInfo):
        robot = scenario.robot
        n = robot.n_feet
        dt = scenario.mpc.node_dt
        N = info.stance.shape[0] - 1
        self.A = []
        self.B = []
        self.c = []
        for k in range(N):
            stance_k = tuple(bool(s) for s in info.stance[k])
            gaining = tuple(
                bool(not info.stance[k, i] and info.stance[k + 1, i]) for i in range(n)
            )
            A, B, c0 = _node_dynamics_template(dt, robot.mass, robot.gravity, n, stance_k, gaining)
            if any(gaining):
                c = c0.copy()
                for i in range(n):
                    if gaining[i]:
                        h = info.touchdown_height[k, i]
                        c[6 + 3 * i + 2] = h if np.isfinite(h) else 0.0
            else:
                c = c0
            self.A.append(A)
            self.B.append(B)
            self.c.append(c)

    def step(self, k, x, u):
        return self.A[k] @ x + self.B[k] @ u + self.c[k]

    def jacobians(self, k, x, u):
        return self.A[k], self.B[k]


class _LocomotionCost:
    """Batched cost/penalty evaluation for the assembled locomotion problem."""

    def __init__(self, scenario: Scenario, info: AssemblyInfo):
        self.terrain = scenario.terrain
        self.w = scenario.weights
        self.pw = scenario.penalties
        self.limits = scenario.limits
        self.robot = scenario.robot
        self.info = info
        self.dt = scenario.mpc.node_dt
        self.rho = 1.0
        self.n_feet = scenario.robot.n_feet
        self.nx = ReducedState.dim(self.n_feet)
        n = self.n_feet
        N = info.stance.shape[0] - 1
        self.N = N
        self.hips = np.asarray(scenario.robot.hip_offsets, dtype=float)  # (n, 3)
        self.S = info.stance[:N].astype(bool)  # (N, n) control-interpretation flags
        self.stance_idx = np.nonzero(self.S)
        self.swing_idx = np.nonzero(~self.S)
        self.tau_max = scenario.limits.torque_proxy_max
        if self.tau_max is not None:
            self.tau_max *= 1.0 - scenario.mpc.torque_margin
        self.margin = scenario.mpc.touchdown_margin
        # the margin rides on the surface-steering term; w_f = 0 disables both
        self.margin_terms = info.margin_terms if scenario.weights.w_f > 0 else []
        # tiny smoothing of norms so gradients exist at zero
        self.eps_norm = 1e-6

    def set_penalty_scale(self, rho: float) -> None:
        self.rho = float(rho)

    # -- helpers --

    def _split(self, xs, us):
        N, n = self.N, self.n_feet
        r = xs[:, 0:3]
        rdot = xs[:, 3:6]
        feet = xs[:, 6:].reshape(xs.shape[0], n, 3)
        u = us.reshape(N, n, 3)
        return r, rdot, feet, u

    def _levers(self, r, feet):
        # foot minus hip, per node and foot: (K, n, 3)
        return feet - (r[:, None, :] + self.hips[None, :, :])

    def value(self, xs, us) -> float:
        w, pw, info, dt = self.w, self.pw, self.info, self.dt
        N, n = self.N, self.n_feet
        r, rdot, feet, u = self._split(xs, us)
        S = self.S
        rho = self.rho

        total = 0.0
        # tracking + regularizers on x at nodes 0..N (terminal gets the same state terms)
        dv = rdot[:, :2] - info.vref
        total += w.w_r * dt * np.sum(dv * dv)
        total += w.n_velocity * dt * np.sum(rdot * rdot)
        dz = r[:, 2] - info.z_nominal
        total += w.q_base_z * dt * np.sum(dz * dz)
        foot_err = feet[:, :, :2] - (r[:, None, :2] + self.hips[None, :, :2])
        total += w.q_foot_xy * dt * np.sum(foot_err * foot_err)

        # control regularizers
        total += w.k_force * dt * np.sum(u[S] ** 2)
        total += w.r_swing * dt * np.sum(u[~S] ** 2)

        # contact-surface penalty at stance feet
        if self.stance_idx[0].size:
            pts = feet[: N][self.S][:, :2]
            batch = fieldmod.evaluate_points(self.terrain, pts, want_gradient=False)
            total += w.w_f * dt * float(np.sum(batch.penalty))

        # constraint penalties
        total += 0.5 * rho * dt * self._penalty_sq_sum(r, feet, u)
        return float(total)

    def _penalty_sq_sum(self, r, feet, u) -> float:
        """Sum of weighted squared violations (value only)."""
        info, pw = self.info, self.pw
        N, n = self.N, self.n_feet
        S = self.S
        out = 0.0
        if S.any():
            f = u[S]
            mu = info.mu_eff[S]
            res = np.stack(
                [
                    mu * f[:, 2] - f[:, 0],
                    mu * f[:, 2] + f[:, 0],
                    mu * f[:, 2] - f[:, 1],
                    mu * f[:, 2] + f[:, 1],
                ],
                axis=1,
            )
            out += pw.friction * np.sum(np.minimum(res, 0.0) ** 2)
            fxy = np.sqrt(f[:, 0] ** 2 + f[:, 1] ** 2 + self.eps_norm**2)
            cone = mu - fxy / np.maximum(f[:, 2], self.limits.f_z_min)
            out += pw.cone * np.sum(np.minimum(cone, 0.0) ** 2)
            if self.tau_max is not None:
                lev = self._levers(r[:N], feet[:N])[S]
                moment = np.cross(lev, f)
                tau = np.sqrt(np.sum(moment**2, axis=1) + self.eps_norm**2)
                out += pw.torque * np.sum(np.minimum(self.tau_max - tau, 0.0) ** 2)
        # reach, all feet and nodes (including terminal)
        lev_all = self._levers(r, feet)
        dist = np.sqrt(np.sum(lev_all**2, axis=2) + self.eps_norm**2)
        out += pw.reach * np.sum(np.minimum(self.limits.reach_max - dist, 0.0) ** 2)
        # swing vertical tracking + landing taper on horizontal swing velocity
        sw = self.swing_idx
        if sw[0].size:
            zerr = feet[:N][~self.S][:, 2] - info.zref[~self.S]
            out += pw.swing_z_pos * np.sum(zerr**2)
            zderr = u[~self.S][:, 2] - info.zdotref[~self.S]
            out += pw.swing_z_vel * np.sum(zderr**2)
            taper = info.late_swing[~self.S]
            uxy = u[~self.S][:, :2]
            out += pw.swing_land * np.sum(taper[:, None] * uxy**2)
        # touchdown containment margin inside the assigned patch
        for node, foot, poly in self.margin_terms:
            g = _signed_margin(poly, feet[node, foot, :2])[0] - self.margin
            if g < 0:
                out += pw.margin * g * g
        # base height corridor
        lo, hi = self.limits.base_z_range
        out += pw.base_z * np.sum(np.minimum(r[:, 2] - lo, 0.0) ** 2)
        out += pw.base_z * np.sum(np.minimum(hi - r[:, 2], 0.0) ** 2)
        return float(out)

    def violations(self, xs, us) -> dict:
        info = self.info
        N, n = self.N, self.n_feet
        r, rdot, feet, u = self._split(xs, us)
        S = self.S
        out = {}
        if S.any():
            f = u[S]
            mu = info.mu_eff[S]
            res = np.stack(
                [
                    mu * f[:, 2] - f[:, 0],
                    mu * f[:, 2] + f[:, 0],
                    mu * f[:, 2] - f[:, 1],
                    mu * f[:, 2] + f[:, 1],
                ],
                axis=1,
            )
            out["friction"] = float(max(0.0, -res.min(initial=0.0)))
            if self.tau_max is not None:
                lev = self._levers(r[:N], feet[:N])[S]
                tau = np.linalg.norm(np.cross(lev, f), axis=1)
                out["torque"] = float(max(0.0, (tau - self.tau_max).max(initial=0.0)))
        lev_all = self._levers(r, feet)
        dist = np.linalg.norm(lev_all, axis=2)
        out["reach"] = float(max(0.0, (dist - self.limits.reach_max).max(initial=0.0)))
        if self.swing_idx[0].size:
            zerr = np.abs(feet[:N][~self.S][:, 2] - info.zref[~self.S])
            out["swing_z"] = float(zerr.max(initial=0.0))
        return out

    def derivatives(self, xs, us):
        from .solver import CostDerivatives

        w, pw, info, dt = self.w, self.pw, self.info, self.dt
        N, n, nx = self.N, self.n_feet, self.nx
        nu = 3 * n
        r, rdot, feet, u = self._split(xs, us)
        S = self.S
        rho = self.rho

        lx = np.zeros((N + 1, nx))
        lxx = np.zeros((N + 1, nx, nx))
        lu = np.zeros((N, nu))
        luu = np.zeros((N, nu, nu))
        lux = np.zeros((N, nu, nx))

        # velocity tracking + velocity regularizer
        dv = rdot[:, :2] - info.vref
        lx[:, 3:5] += 2 * w.w_r * dt * dv
        lx[:, 3:6] += 2 * w.n_velocity * dt * rdot
        for j in range(3):
            lxx[:, 3 + j, 3 + j] += 2 * w.n_velocity * dt
        lxx[:, 3, 3] += 2 * w.w_r * dt
        lxx[:, 4, 4] += 2 * w.w_r * dt

        # base height regularizer
        dz = r[:, 2] - info.z_nominal
        lx[:, 2] += 2 * w.q_base_z * dt * dz
        lxx[:, 2, 2] += 2 * w.q_base_z * dt

        # feet-under-hips regularizer (exact quadratic, includes cross blocks)
        foot_err = feet[:, :, :2] - (r[:, None, :2] + self.hips[None, :, :2])
        cw = 2 * w.q_foot_xy * dt
        lx[:, 0:2] += -cw * foot_err.sum(axis=1)
        for i in range(n):
            fs = 6 + 3 * i
            lx[:, fs : fs + 2] += cw * foot_err[:, i]
            lxx[:, fs, fs] += cw
            lxx[:, fs + 1, fs + 1] += cw
            lxx[:, fs, 0] += -cw
            lxx[:, 0, fs] += -cw
            lxx[:, fs + 1, 1] += -cw
            lxx[:, 1, fs + 1] += -cw
        lxx[:, 0, 0] += cw * n
        lxx[:, 1, 1] += cw * n

        # control regularizers
        ur = u.reshape(N, nu)
        reg_coef = np.repeat(
            np.where(self.S[:, :, None], w.k_force, w.r_swing), 3, axis=2
        ).reshape(N, nu)
        lu += 2 * dt * reg_coef * ur
        idx = np.arange(nu)
        luu[:, idx, idx] += 2 * dt * reg_coef

        # contact-surface penalty at stance feet (analytic gradient + GN Hessian)
        ks, fs_ = self.stance_idx
        if ks.size:
            pts = feet[:N][self.S][:, :2]
            batch = fieldmod.evaluate_points(self.terrain, pts, want_gradient=True)
            coef = w.w_f * dt
            grads = batch.gradient  # (m, 2)
            curv = np.einsum("mi,mj->mij", grads, grads) / np.maximum(batch.penalty, 1e-2)[
                :, None, None
            ]
            for m, (k, i) in enumerate(zip(ks, fs_)):
                col = 6 + 3 * i
                lx[k, col : col + 2] += coef * grads[m]
                lxx[k, col : col + 2, col : col + 2] += coef * curv[m]

        # constraint penalties
        self._penalty_derivatives(r, feet, u, lx, lxx, lu, luu, lux, rho)

        return CostDerivatives(
            lx=lx[:N],
            lu=lu,
            lxx=lxx[:N],
            luu=luu,
            lux=lux,
            phi_x=lx[N],
            phi_xx=lxx[N],
        )

    def _penalty_derivatives(self, r, feet, u, lx, lxx, lu, luu, lux, rho):
        info, pw = self.info, self.pw
        N, n = self.N, self.n_feet
        dt = self.dt
        S = self.S
        ks, fs_ = self.stance_idx

        if ks.size:
            f = u[S]  # (m, 3) stance forces
            mu = info.mu_eff[S]  # (m,)
            m_count = f.shape[0]
            cols0 = 3 * fs_  # control column of each stance foot

            # friction pyramid: residuals (mu fz +- fx, mu fz +- fy), linear in f
            res = np.stack(
                [
                    mu * f[:, 2] - f[:, 0],
                    mu * f[:, 2] + f[:, 0],
                    mu * f[:, 2] - f[:, 1],
                    mu * f[:, 2] + f[:, 1],
                ],
                axis=1,
            )
            act = res < 0.0
            if act.any():
                wgt = rho * dt * pw.friction
                sgn = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
                resa = np.where(act, res, 0.0)  # (m, 4)
                g_xy = resa @ sgn  # (m, 2) gradient wrt fx, fy
                g_z = resa.sum(axis=1) * mu
                acf = act.astype(float)
                # row structure of C: d res / d f = [sgn | mu]
                H_xy = np.einsum("ma,ab,ac->mbc", acf, sgn, sgn)  # (m, 2, 2)
                H_zz = acf.sum(axis=1) * mu * mu
                H_xyz = np.einsum("ma,ab,m->mb", acf, sgn, mu)  # (m, 2) cross fx/fy with fz
                for m_i in np.nonzero(act.any(axis=1))[0]:
                    k, c0 = ks[m_i], cols0[m_i]
                    lu[k, c0 : c0 + 2] += wgt * g_xy[m_i]
                    lu[k, c0 + 2] += wgt * g_z[m_i]
                    luu[k, c0 : c0 + 2, c0 : c0 + 2] += wgt * H_xy[m_i]
                    luu[k, c0 + 2, c0 + 2] += wgt * H_zz[m_i]
                    luu[k, c0 : c0 + 2, c0 + 2] += wgt * H_xyz[m_i]
                    luu[k, c0 + 2, c0 : c0 + 2] += wgt * H_xyz[m_i]

            # Euclidean cone on top of the pyramid: g = mu - |f_xy| / f_z
            fz_floor = self.limits.f_z_min
            fz = np.maximum(f[:, 2], fz_floor)
            fxy = np.sqrt(f[:, 0] ** 2 + f[:, 1] ** 2 + self.eps_norm**2)
            g_cone = mu - fxy / fz
            viol_cone = g_cone < 0.0
            if viol_cone.any():
                wgt = rho * dt * pw.cone
                for m_i in np.nonzero(viol_cone)[0]:
                    k, c0 = ks[m_i], cols0[m_i]
                    dz = fxy[m_i] / fz[m_i] ** 2 if f[m_i, 2] > fz_floor else 0.0
                    dg = np.array(
                        [
                            -f[m_i, 0] / (fxy[m_i] * fz[m_i]),
                            -f[m_i, 1] / (fxy[m_i] * fz[m_i]),
                            dz,
                        ]
                    )
                    lu[k, c0 : c0 + 3] += wgt * g_cone[m_i] * dg
                    luu[k, c0 : c0 + 3, c0 : c0 + 3] += wgt * np.outer(dg, dg)

            # torque proxy: g = tau_max - ||lev x f||
            if self.tau_max is not None:
                lev = (feet[:N] - (r[:N, None, :] + self.hips[None, :, :]))[S]  # (m, 3)
                moment = np.cross(lev, f)
                tau = np.sqrt(np.einsum("mi,mi->m", moment, moment) + self.eps_norm**2)
                g_tau = self.tau_max - tau
                viol_tau = g_tau < 0.0
                if viol_tau.any():
                    wgt = rho * dt * pw.torque
                    m_hat = moment[viol_tau] / tau[viol_tau, None]
                    dtau_df = np.cross(m_hat, lev[viol_tau])  # skew(lev)^T m_hat
                    dtau_dlev = np.cross(f[viol_tau], m_hat)  # -skew(f)^T m_hat
                    for j, m_i in enumerate(np.nonzero(viol_tau)[0]):
                        k, c0 = ks[m_i], cols0[m_i]
                        colx = 6 + 3 * fs_[m_i]
                        gt = g_tau[m_i]
                        gu = -dtau_df[j]
                        gx_foot = -dtau_dlev[j]  # d lev / d foot = +I
                        gx_r = dtau_dlev[j]  # d lev / d r = -I
                        lu[k, c0 : c0 + 3] += wgt * gt * gu
                        lx[k, colx : colx + 3] += wgt * gt * gx_foot
                        lx[k, 0:3] += wgt * gt * gx_r
                        luu[k, c0 : c0 + 3, c0 : c0 + 3] += wgt * np.outer(gu, gu)
                        lxx[k, colx : colx + 3, colx : colx + 3] += wgt * np.outer(
                            gx_foot, gx_foot
                        )
                        lxx[k, 0:3, 0:3] += wgt * np.outer(gx_r, gx_r)
                        lxx[k, colx : colx + 3, 0:3] += wgt * np.outer(gx_foot, gx_r)
                        lxx[k, 0:3, colx : colx + 3] += wgt * np.outer(gx_r, gx_foot)
                        lux[k, c0 : c0 + 3, colx : colx + 3] += wgt * np.outer(gu, gx_foot)
                        lux[k, c0 : c0 + 3, 0:3] += wgt * np.outer(gu, gx_r)

        # reach, all nodes and feet
        lev_all = self._levers(r, feet)  # (N+1, n, 3)
        dist = np.sqrt(np.sum(lev_all**2, axis=2) + self.eps_norm**2)
        slack = self.limits.reach_max - dist
        viol = slack < 0.0
        if viol.any():
            wgt = rho * dt * pw.reach
            for k, i in zip(*np.nonzero(viol)):
                d = lev_all[k, i] / dist[k, i]
                g = slack[k, i]
                colx = 6 + 3 * i
                # d slack / d foot = -d, d slack / d r = +d
                lx[k, colx : colx + 3] += wgt * g * (-d)
                lx[k, 0:3] += wgt * g * d
                lxx[k, colx : colx + 3, colx : colx + 3] += wgt * np.outer(d, d)
                lxx[k, 0:3, 0:3] += wgt * np.outer(d, d)
                lxx[k, colx : colx + 3, 0:3] += -wgt * np.outer(d, d)
                lxx[k, 0:3, colx : colx + 3] += -wgt * np.outer(d, d)

        # swing vertical tracking (exact quadratics of the 0.5 * w * g^2 form)
        kw, iw = self.swing_idx
        if kw.size:
            wz = rho * dt * pw.swing_z_pos
            wv = rho * dt * pw.swing_z_vel
            wl = rho * dt * pw.swing_land
            for k, i in zip(kw, iw):
                colz = 6 + 3 * i + 2
                zerr = feet[k, i, 2] - info.zref[k, i]
                lx[k, colz] += wz * zerr
                lxx[k, colz, colz] += wz
                colu = 3 * i + 2
                zderr = u[k, i, 2] - info.zdotref[k, i]
                lu[k, colu] += wv * zderr
                luu[k, colu, colu] += wv
                taper = info.late_swing[k, i]
                if taper > 0.0:
                    cu = 3 * i
                    lu[k, cu : cu + 2] += wl * taper * u[k, i, :2]
                    luu[k, cu, cu] += wl * taper
                    luu[k, cu + 1, cu + 1] += wl * taper

        # touchdown containment margin inside the assigned patch
        wm = rho * dt * pw.margin
        for node, foot, poly in self.margin_terms:
            p = feet[node, foot, :2]
            m, grad_m = _signed_margin(poly, p)
            g = m - self.margin
            if g < 0:
                colx = 6 + 3 * foot
                lx[node, colx : colx + 2] += wm * g * grad_m
                lxx[node, colx : colx + 2, colx : colx + 2] += wm * np.outer(grad_m, grad_m)

        # base height corridor
        lo, hi = self.limits.base_z_range
        wb = rho * dt * pw.base_z
        low = r[:, 2] - lo
        high = hi - r[:, 2]
        mask_lo = low < 0
        mask_hi = high < 0
        lx[mask_lo, 2] += wb * low[mask_lo]
        lxx[mask_lo, 2, 2] += wb
        lx[mask_hi, 2] += -wb * high[mask_hi]
        lxx[mask_hi, 2, 2] += wb


def assemble_problem(
    scenario: Scenario, state: ReducedState, t: float, memory: PlanMemory | None = None
) -> tuple[OcpProblem, AssemblyInfo]:
    """Build the horizon problem at time t: stance flags per node from the gait
    window, contact-gain resets at phase changes, penalty costs at stance nodes
    only, swing-height references toward the assigned surfaces."""
    if scenario.terrain.n_patches == 0:
        raise NoSurfaces("cannot plan on empty terrain")
    memory = memory or PlanMemory()
    mpc = scenario.mpc
    gait = scenario.gait
    robot = scenario.robot
    n = robot.n_feet
    N = mpc.n_nodes
    dt = mpc.node_dt

    node_times = t + dt * np.arange(N + 1)
    mid_times = node_times[:-1] + 0.5 * dt
    # flags sampled at node starts so the first control's units match the
    # plant's phase when the tick begins
    sample_times = node_times + 1e-9
    stance = np.array([gait.stance_at(tt) for tt in sample_times], dtype=bool)

    timelines = _build_timelines(scenario, state, t, memory)

    touchdown_height = np.full((N, n), np.nan)
    mu_eff = np.full((N, n), scenario.limits.mu)
    zref = np.full((N, n), np.nan)
    zdotref = np.full((N, n), np.nan)
    late_swing = np.zeros((N, n))
    z_nominal = np.zeros(N + 1)
    vref = np.array([scenario.velocity_at(tt) for tt in sample_times])
    planned_nodes = []
    margin_terms = []

    for k in range(N + 1):
        tt = sample_times[k]
        heights = []
        for i in range(n):
            tl = timelines[i]
            if stance[k, i]:
                h, pid, mu = tl.at(tt)
                heights.append(h)
                if k < N:
                    mu_eff[k, i] = mu * (1.0 - mpc.friction_margin)
            else:
                h_next, pid, mu = tl.next_after(tt)
                heights.append(h_next)
                if k < N:
                    lift_h, _, _ = tl.at(tt)
                    try:
                        t_lift, t_td = gait.swing_interval(tt, i)
                    except ValueError:
                        t_lift, t_td = tt, tt + dt
                    phase = float(np.clip((tt - t_lift) / max(t_td - t_lift, 1e-9), 0.0, 1.0))
                    z, dz_dphase = swing_reference(lift_h, h_next, robot.apex_clearance, phase)
                    zref[k, i] = z
                    zdotref[k, i] = dz_dphase / max(t_td - t_lift, 1e-9)
                    late_swing[k, i] = float(np.clip((phase - 0.65) / 0.25, 0.0, 1.0)) ** 2
            if k < N and not stance[k, i] and stance[k + 1, i]:
                h_next, pid, mu = timelines[i].next_after(tt)
                touchdown_height[k, i] = h_next
                planned_nodes.append((k + 1, i, float(node_times[k + 1])))
                if pid is not None:
                    margin_terms.append((k + 1, i, scenario.terrain.patch_by_id(pid).polygon))
        z_nominal[k] = float(np.mean(heights)) + robot.nominal_height

    info = AssemblyInfo(
        node_times=node_times,
        mid_times=mid_times,
        stance=stance,
        touchdown_height=touchdown_height,
        mu_eff=mu_eff,
        z_nominal=z_nominal,
        vref=vref,
        zref=zref,
        zdotref=zdotref,
        late_swing=late_swing,
        timelines=timelines,
        planned_touchdown_nodes=planned_nodes,
        margin_terms=margin_terms,
    )

    lim = scenario.limits
    u_lower = np.empty((N, 3 * n))
    u_upper = np.empty((N, 3 * n))
    for i in range(n):
        cols = slice(3 * i, 3 * i + 3)
        for k in range(N):
            if stance[k, i]:
                u_lower[k, cols] = (-lim.f_xy_max, -lim.f_xy_max, lim.f_z_min)
                u_upper[k, cols] = (lim.f_xy_max, lim.f_xy_max, lim.f_z_max)
            else:
                u_lower[k, cols] = -lim.swing_velocity_max
                u_upper[k, cols] = lim.swing_velocity_max

    problem = OcpProblem(
        dynamics=_ReducedDynamics(scenario, info),
        cost=_LocomotionCost(scenario, info),
        x0=state.to_vector(),
        u_lower=u_lower,
        u_upper=u_upper,
    )
    return problem, info


def default_guess(scenario: Scenario, info: AssemblyInfo) -> np.ndarray:
    """Nominal warm start: even weight support on stance feet, reference-speed
    swing with the profile's vertical rate."""
    robot = scenario.robot
    n = robot.n_feet
    N = info.stance.shape[0] - 1
    us = np.zeros((N, 3 * n))
    for k in range(N):
        n_stance = max(1, int(info.stance[k].sum()))
        fz = robot.mass * robot.gravity / n_stance
        for i in range(n):
            cols = slice(3 * i, 3 * i + 3)
            if info.stance[k, i]:
                us[k, cols] = (0.0, 0.0, fz)
            else:
                us[k, cols] = (info.vref[k, 0], info.vref[k, 1], info.zdotref[k, i])
    return us


def shift_warm_start(
    prev_us: np.ndarray, advance: float, node_dt: float, pad: np.ndarray | None = None
) -> np.ndarray:
    """Shift a control plan forward in time by `advance`, padding the tail by
    repeating the final control (or the supplied pad row). Shifts round to the
    node grid; a shift beyond the horizon clamps to a full shift."""
    n_shift = int(np.clip(round(advance / node_dt), 0, prev_us.shape[0]))
    if n_shift == 0:
        return prev_us.copy()
    tail = prev_us[-1] if pad is None else pad
    return np.vstack([prev_us[n_shift:], np.tile(tail, (n_shift, 1))])


@dataclass
class MpcDiagnostics:
    solve_ms: float
    cost: float
    iterations: int
    converged: bool
    status: str
    violations: dict
    degraded: bool
    planned_touchdowns: list  # (foot, time, xy, patch_id, penalty)


class MpcController:
    """Owns the planner state across MPC steps (assignments, warm starts)."""

    def __init__(self, scenario: Scenario):
        validate_scenario(scenario)
        self.scenario = scenario
        self.memory = PlanMemory()
        for i in range(scenario.robot.n_feet):
            self.memory.last_height[i] = float(scenario.initial_state.feet[i, 2])
            self.memory.last_patch[i] = select_surface(
                scenario.terrain, scenario.initial_state.feet[i, :2]
            )
        self._settings = replace(
            scenario.mpc.solver, max_iterations=scenario.mpc.solver_iterations
        )

    def replace_terrain(self, terrain: TerrainModel) -> None:
        """Swap the terrain between MPC steps (teleop live edits)."""
        if terrain.n_patches == 0:
            raise NoSurfaces("terrain replacement must keep at least one patch")
        self.scenario = replace(self.scenario, terrain=terrain)
        ids = {p.id for p in terrain.patches}
        for i, pid in list(self.memory.last_patch.items()):
            if pid is not None and pid not in ids:
                self.memory.last_patch[i] = None
        # stale plan locations may now sit outside the new terrain; the next
        # assemble re-assigns them through the fallback rule
        self.memory.prev_solution = None

    def set_reference(self, vx: float, vy: float) -> None:
        self.scenario = replace(
            self.scenario, reference_velocity=(VelocitySegment(0.0, vx, vy),)
        )

    def step(self, state: ReducedState, t: float):
        """One MPC step: assemble, warm start, solve, return the first control.

        Never raises on solver trouble; falls back to the previous plan with a
        degraded flag.
        """
        from .solver import RolloutDiverged

        scenario = self.scenario
        t_start = _time.perf_counter()
        sol = None
        status = "exception"
        try:
            problem, info = assemble_problem(scenario, state, t, self.memory)
            guess = self._warm_start(scenario, info, t)
            sol = solve(problem, guess, self._settings)
            status = sol.status
            degraded = "failed" in sol.status
        except (RolloutDiverged, np.linalg.LinAlgError, FloatingPointError) as exc:
            status = f"exception: {type(exc).__name__}"
            degraded = True
        wall_ms = (_time.perf_counter() - t_start) * 1e3
        n = scenario.robot.n_feet

        if degraded or sol is None:
            u0, _prev = self._fallback_control(t)
            diag = MpcDiagnostics(
                solve_ms=wall_ms,
                cost=sol.cost if sol else float("nan"),
                iterations=sol.iterations if sol else 0,
                converged=False,
                status=status,
                violations=sol.violations if sol else {},
                degraded=True,
                planned_touchdowns=[],
            )
            return u0, sol, diag

        self.memory.prev_solution = sol
        self.memory.prev_time = t
        self.memory.prev_stance = info.stance
        self.memory.timelines = info.timelines
        planned = []
        touchdowns_by_foot: dict[int, list] = {}
        for node, foot, tt in info.planned_touchdown_nodes:
            xy = sol.xs[node][6 + 3 * foot : 6 + 3 * foot + 2].copy()
            pid = select_surface(scenario.terrain, xy)
            pen = fieldmod.terrain_penalty(scenario.terrain, xy).penalty
            planned.append((foot, tt, xy, pid, pen))
            touchdowns_by_foot.setdefault(foot, []).append((tt, xy))
        self.memory.planned_touchdowns = touchdowns_by_foot

        u0 = sol.us[0].reshape(n, 3).copy()
        diag = MpcDiagnostics(
            solve_ms=wall_ms,
            cost=sol.cost,
            iterations=sol.iterations,
            converged=sol.converged,
            status=sol.status,
            violations=sol.violations,
            degraded=False,
            planned_touchdowns=planned,
        )
        return u0, sol, diag

    def _warm_start(self, scenario, info, t):
        mem = self.memory
        base = default_guess(scenario, info)
        if mem.prev_solution is None or mem.prev_time is None or mem.prev_stance is None:
            return base
        advance = t - mem.prev_time
        n_shift = int(np.clip(round(advance / scenario.mpc.node_dt), 0, base.shape[0]))
        shifted = shift_warm_start(mem.prev_solution.us, advance, scenario.mpc.node_dt)
        if shifted.shape != base.shape:
            return base
        # stale controls are meaningless where the stance pattern changed
        n = scenario.robot.n_feet
        prev_stance = mem.prev_stance
        for k in range(shifted.shape[0]):
            kp = min(k + n_shift, prev_stance.shape[0] - 2)
            for i in range(n):
                if info.stance[k, i] != prev_stance[kp, i]:
                    shifted[k, 3 * i : 3 * i + 3] = base[k, 3 * i : 3 * i + 3]
        return shifted

    def _fallback_control(self, t):
        scenario = self.scenario
        n = scenario.robot.n_feet
        mem = self.memory
        if mem.prev_solution is not None and mem.prev_time is not None:
            k = int(round((t - mem.prev_time) / scenario.mpc.node_dt))
            k = min(max(k, 0), mem.prev_solution.us.shape[0] - 1)
            return mem.prev_solution.us[k].reshape(n, 3).copy(), mem.prev_solution
        stance = scenario.gait.stance_at(t)
        u = np.zeros((n, 3))
        n_st = max(1, sum(stance))
        for i in range(n):
            if stance[i]:
                u[i, 2] = scenario.robot.mass * scenario.robot.gravity / n_st
        return u, None

    def height_for_touchdown(self, foot: int, t: float) -> tuple[float, str | None]:
        tl = self.memory.timelines.get(foot)
        tol = self.scenario.mpc.node_dt
        if tl is not None:
            hit = tl.touchdown_near(t, tol)
            if hit is not None:
                return hit[0], hit[1]
        # fall back to whatever patch is under (or nearest) the foot right now
        return self.memory.last_height.get(foot, 0.0), self.memory.last_patch.get(foot)


def mpc_step(scenario: Scenario, state: ReducedState, t: float, memory: PlanMemory | None = None):
    """One-shot functional wrapper around MpcController.step."""
    controller = MpcController(scenario)
    if memory is not None:
        controller.memory = memory
    return controller.step(state, t)


# --- closed loop -----------------------------------------------------------------


@dataclass
class TouchdownEvent:
    t: float
    foot: int
    x: float
    y: float
    z: float
    patch_id: str | None
    assigned_patch_id: str | None
    penalty: float
    winding: float


@dataclass
class TickRecord:
    t: float
    state: np.ndarray  # state vector after applying this tick's control
    control: np.ndarray  # (n_feet, 3)
    stance: tuple
    solve_ms: float
    iterations: int
    cost: float
    violations: dict
    degraded: bool
    foot_forces: list  # (foot, fx, fy, fz, torque_proxy, residual_min)
    saturated: bool = False  # applied force hit the torque-proxy actuator limit


@dataclass
class MpcLog:
    scenario_name: str
    hip_offsets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    ticks: list[TickRecord] = field(default_factory=list)
    touchdowns: list[TouchdownEvent] = field(default_factory=list)

    def summary(self) -> dict:
        n_ticks = len(self.ticks)
        degraded = sum(1 for t in self.ticks if t.degraded)
        tds = self.touchdowns
        contained = sum(1 for e in tds if e.patch_id is not None and e.penalty == 0.0)
        forces = [f for t in self.ticks for f in t.foot_forces]
        ratios = [np.hypot(f[1], f[2]) / f[3] for f in forces if f[3] > 1e-6]
        return {
            "ticks": n_ticks,
            "degraded_fraction": degraded / n_ticks if n_ticks else 0.0,
            "saturated_fraction": (
                sum(1 for t in self.ticks if t.saturated) / n_ticks if n_ticks else 0.0
            ),
            "touchdowns": len(tds),
            "touchdowns_contained": contained,
            "containment_fraction": contained / len(tds) if tds else 1.0,
            "max_torque_proxy": max((f[4] for f in forces), default=0.0),
            "min_friction_residual": min((f[5] for f in forces), default=0.0),
            "max_force_ratio": max(ratios, default=0.0),
            "mean_force_ratio": float(np.mean(ratios)) if ratios else 0.0,
            "mean_solve_ms": float(np.mean([t.solve_ms for t in self.ticks])) if n_ticks else 0.0,
            "max_hip_foot_xy": self.max_stance_hip_distance(),
            "final_base_xy": (
                ReducedState.from_vector(self.ticks[-1].state, self.hip_offsets.shape[0]).r[:2].tolist()
                if n_ticks and self.hip_offsets.size
                else None
            ),
        }

    def max_stance_hip_distance(self) -> float:
        """Largest horizontal hip-to-foot distance over all logged stance feet."""
        worst = 0.0
        n = self.hip_offsets.shape[0]
        for rec in self.ticks:
            state = ReducedState.from_vector(rec.state, n)
            hips_xy = state.r[:2] + self.hip_offsets[:, :2]
            for i in range(n):
                if rec.stance[i]:
                    worst = max(worst, float(np.linalg.norm(state.feet[i, :2] - hips_xy[i])))
        return worst


def run_closed_loop(scenario: Scenario, controller: MpcController | None = None) -> MpcLog:
    """Simulate the reduced model at the control rate, applying mpc_step
    outputs; touchdown resets at gait transitions use the controller's surface
    assignments. Optional zero-mean force disturbance on the base."""
    controller = controller or MpcController(scenario)
    state = scenario.initial_state
    tick = scenario.mpc.tick
    n_ticks = int(round(scenario.duration / tick))
    rng = np.random.default_rng(scenario.seed)
    log = MpcLog(
        scenario_name=scenario.name,
        hip_offsets=np.asarray(scenario.robot.hip_offsets, dtype=float),
    )

    t = 0.0
    for j in range(n_ticks):
        u0, _sol, diag = controller.step(state, t)
        stance_now = scenario.gait.stance_at(t)
        u0, saturated = _saturate_torque(scenario, state, u0, stance_now)

        # forces as applied at the start of the tick
        forces = []
        for i in range(scenario.robot.n_feet):
            if stance_now[i]:
                f = u0[i]
                tau = torque_proxy(state, i, f, scenario.robot)
                mu = controller_mu(controller, i)
                res = friction_residuals(f, mu)
                forces.append((i, float(f[0]), float(f[1]), float(f[2]), tau, float(res.min())))

        state = _simulate_tick(scenario, controller, state, u0, t, t + tick, log, rng)
        log.ticks.append(
            TickRecord(
                t=t,
                state=state.to_vector(),
                control=u0.copy(),
                stance=stance_now,
                solve_ms=diag.solve_ms,
                iterations=diag.iterations,
                cost=diag.cost,
                violations=diag.violations,
                degraded=diag.degraded,
                foot_forces=forces,
                saturated=saturated,
            )
        )
        t = (j + 1) * tick
    return log


def _saturate_torque(scenario, state, u0, stance):
    """Actuator saturation of the reduced model: the plant cannot realize a
    stance force whose hip moment exceeds the torque limit, so the component
    perpendicular to the leg axis is scaled down to the limit. Saturation
    events are flagged in the log, never hidden."""
    tau_max = scenario.limits.torque_proxy_max
    if tau_max is None:
        return u0, False
    robot = scenario.robot
    u = np.array(u0, dtype=float)
    saturated = False
    for i in range(robot.n_feet):
        if not stance[i]:
            continue
        lev = state.feet[i] - (state.r + np.asarray(robot.hip_offsets[i]))
        tau = float(np.linalg.norm(np.cross(lev, u[i])))
        if tau <= tau_max or tau == 0.0:
            continue
        ll = float(lev @ lev)
        if ll < 1e-12:
            continue
        f_par = lev * (u[i] @ lev) / ll
        f_perp = u[i] - f_par
        u[i] = f_par + f_perp * (tau_max / tau)
        saturated = True
    return u, saturated


def controller_mu(controller: MpcController, foot: int) -> float:
    scenario = controller.scenario
    pid = controller.memory.last_patch.get(foot)
    if pid is not None:
        try:
            return _effective_mu(scenario.limits, scenario.terrain.patch_by_id(pid).friction)
        except KeyError:
            pass
    return scenario.limits.mu


def _simulate_tick(scenario, controller, state, u0, t0, t1, log, rng):
    """Advance the plant over (t0, t1], splitting at gait transitions and
    applying touchdown resets (with the controller's assigned heights) at
    each contact-gain instant."""
    gait = scenario.gait
    robot = scenario.robot
    transitions = gait.transitions_in(t0, t1)
    ends = list(transitions)
    if not ends or ends[-1] < t1 - 1e-12:
        ends.append(t1)
    stance0 = gait.stance_at(t0 + 1e-9)
    u = np.array(u0, dtype=float)
    a = t0
    for b in ends:
        if b - a > 1e-12:
            stance = gait.stance_at(a + 1e-9)
            # the plan's first control is typed for the tick-start phase; feet
            # whose phase flipped mid-tick get a neutral command instead
            if stance != stance0:
                u = np.array(u0, dtype=float)
                n_st = max(1, sum(stance))
                for i in range(robot.n_feet):
                    if stance[i] != stance0[i]:
                        u[i] = (
                            (0.0, 0.0, robot.mass * robot.gravity / n_st)
                            if stance[i]
                            else (0.0, 0.0, 0.0)
                        )
            state = model_step(state, u, b - a, stance, robot)
            if scenario.disturbance_sigma > 0:
                kick = rng.normal(0.0, scenario.disturbance_sigma, 3) / robot.mass
                state = ReducedState(state.r, state.rdot + (b - a) * kick, state.feet)
        if any(abs(b - tt) < 1e-9 for tt in transitions):
            before = gait.stance_at(b - 1e-9)
            after = gait.stance_at(b + 1e-9)
            terrain = controller.scenario.terrain  # teleop edits land here
            for i in range(robot.n_feet):
                if after[i] and not before[i]:
                    height, assigned_pid = controller.height_for_touchdown(i, b)
                    state = touchdown_reset(state, i, height)
                    xy = state.feet[i, :2]
                    fe = fieldmod.terrain_penalty(terrain, xy)
                    pid = select_surface(terrain, xy)
                    controller.memory.last_height[i] = height
                    controller.memory.last_patch[i] = pid or assigned_pid
                    log.touchdowns.append(
                        TouchdownEvent(
                            t=b,
                            foot=i,
                            x=float(xy[0]),
                            y=float(xy[1]),
                            z=float(state.feet[i, 2]),
                            patch_id=pid,
                            assigned_patch_id=assigned_pid,
                            penalty=fe.penalty,
                            winding=fe.total_winding,
                        )
                    )
                elif before[i] and not after[i]:
                    controller.memory.last_height[i] = float(state.feet[i, 2])
        a = b
    return state
