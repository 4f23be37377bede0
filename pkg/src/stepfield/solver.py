"""Box-controls DDP trajectory optimizer.

Stage-wise Riccati-style recursion with Levenberg regularization, a
backtracking line search on the rolled-out cost, and box bounds on controls
handled by clamping the feedforward direction (bound-active coordinates get
zero gain rows, the free block is re-solved). Nonlinear constraints are
expected to arrive as scheduled quadratic penalties inside the cost model;
the solver exposes a penalty-scale continuation hook and reports violation
norms when the cost model provides them.

The cost and dynamics interfaces are duck-typed:

* dynamics: ``step(k, x, u) -> x_next`` and ``jacobians(k, x, u) -> (A, B)``.
* cost: ``value(xs, us) -> float`` and ``derivatives(xs, us) ->
  CostDerivatives``; optionally ``set_penalty_scale(rho)`` and
  ``violations(xs, us) -> dict``.

``LinearDynamics`` and ``QuadraticCost`` below cover the linear-quadratic
case used throughout the tests; the planner supplies its own batched
implementations for the locomotion problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class RolloutDiverged(ArithmeticError):
    """Forward simulation produced a non-finite state."""


class BackwardPassFailed(ArithmeticError):
    """Value Hessian stayed indefinite at the maximum regularization."""


class LineSearchFailed(ArithmeticError):
    """No step length achieved the required fraction of the expected decrease."""


@dataclass
class SolverSettings:
    max_iterations: int = 100
    convergence_tol: float = 1e-6  # threshold on the expected cost decrease
    reg_init: float = 1e-9
    reg_factor: float = 10.0
    reg_max: float = 1e6
    n_line_steps: int = 11  # alphas 1, 1/2, ..., 2^-10
    armijo: float = 0.1  # accept if actual decrease >= armijo * expected
    penalty_initial: float = 1.0
    penalty_multiplier: float = 10.0
    penalty_cap: float = 1e6
    violation_tol: float = 1e-3

    def alphas(self) -> np.ndarray:
        return 0.5 ** np.arange(self.n_line_steps)


@dataclass
class CostDerivatives:
    """Stacked first/second derivatives of the running and terminal cost."""

    lx: np.ndarray  # (N, nx)
    lu: np.ndarray  # (N, nu)
    lxx: np.ndarray  # (N, nx, nx)
    luu: np.ndarray  # (N, nu, nu)
    lux: np.ndarray  # (N, nu, nx)
    phi_x: np.ndarray  # (nx,)
    phi_xx: np.ndarray  # (nx, nx)


@dataclass
class OcpProblem:
    """Discrete optimal control problem over a fixed node grid."""

    dynamics: object
    cost: object
    x0: np.ndarray
    u_lower: np.ndarray  # (N, nu)
    u_upper: np.ndarray  # (N, nu)

    def __post_init__(self) -> None:
        self.x0 = np.asarray(self.x0, dtype=float)
        self.u_lower = np.asarray(self.u_lower, dtype=float)
        self.u_upper = np.asarray(self.u_upper, dtype=float)
        if self.u_lower.shape != self.u_upper.shape:
            raise ValueError("bound arrays must have matching shapes")
        if np.any(self.u_lower > self.u_upper):
            raise ValueError("lower bounds must not exceed upper bounds")

    @property
    def n_nodes(self) -> int:
        return self.u_lower.shape[0]

    @property
    def n_x(self) -> int:
        return self.x0.size

    @property
    def n_u(self) -> int:
        return self.u_lower.shape[1]


@dataclass
class Solution:
    xs: np.ndarray  # (N+1, nx)
    us: np.ndarray  # (N, nu)
    gains: np.ndarray  # (N, nu, nx)
    feedforward: np.ndarray  # (N, nu)
    cost: float
    violations: dict = field(default_factory=dict)
    iterations: int = 0
    converged: bool = False
    status: str = ""
    cost_trace: list = field(default_factory=list)


class LinearDynamics:
    """x_{k+1} = A_k x_k + B_k u_k + c_k with per-node (or shared) matrices."""

    def __init__(self, A, B, c=None, n_nodes=None):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if A.ndim == 2:
            if n_nodes is None:
                raise ValueError("n_nodes required with shared matrices")
            A = np.repeat(A[None], n_nodes, axis=0)
            B = np.repeat(B[None], n_nodes, axis=0)
        self.A = A
        self.B = B
        self.c = np.zeros((A.shape[0], A.shape[1])) if c is None else np.asarray(c, dtype=float)

    def step(self, k, x, u):
        return self.A[k] @ x + self.B[k] @ u + self.c[k]

    def jacobians(self, k, x, u):
        return self.A[k], self.B[k]


class QuadraticCost:
    """sum_k [0.5 x'Qx + q'x + 0.5 u'Ru + r'u] + 0.5 x_N'Qf x_N + qf'x_N."""

    def __init__(self, Q, R, Qf, q=None, r=None, qf=None, n_nodes=None):
        Q = np.asarray(Q, dtype=float)
        R = np.asarray(R, dtype=float)
        if Q.ndim == 2:
            if n_nodes is None:
                raise ValueError("n_nodes required with shared matrices")
            Q = np.repeat(Q[None], n_nodes, axis=0)
            R = np.repeat(R[None], n_nodes, axis=0)
        self.Q, self.R = Q, R
        self.Qf = np.asarray(Qf, dtype=float)
        N, nx = Q.shape[0], Q.shape[1]
        nu = R.shape[1]
        self.q = np.zeros((N, nx)) if q is None else np.asarray(q, dtype=float)
        self.r = np.zeros((N, nu)) if r is None else np.asarray(r, dtype=float)
        self.qf = np.zeros(nx) if qf is None else np.asarray(qf, dtype=float)

    def value(self, xs, us):
        xr = xs[:-1]
        running = 0.5 * np.einsum("ki,kij,kj->", xr, self.Q, xr)
        running += np.einsum("ki,ki->", self.q, xr)
        running += 0.5 * np.einsum("ki,kij,kj->", us, self.R, us)
        running += np.einsum("ki,ki->", self.r, us)
        terminal = 0.5 * xs[-1] @ self.Qf @ xs[-1] + self.qf @ xs[-1]
        return float(running + terminal)

    def derivatives(self, xs, us):
        xr = xs[:-1]
        N, nx = xr.shape
        nu = us.shape[1]
        return CostDerivatives(
            lx=np.einsum("kij,kj->ki", self.Q, xr) + self.q,
            lu=np.einsum("kij,kj->ki", self.R, us) + self.r,
            lxx=self.Q.copy(),
            luu=self.R.copy(),
            lux=np.zeros((N, nu, nx)),
            phi_x=self.Qf @ xs[-1] + self.qf,
            phi_xx=self.Qf.copy(),
        )


def rollout(problem: OcpProblem, us: np.ndarray, x0=None) -> tuple[np.ndarray, float]:
    """Simulate the control sequence through the problem dynamics.

    Raises ValueError if any control violates the box bounds (the bounds are a
    precondition here, not something rollout fixes) and RolloutDiverged if a
    state goes non-finite. Returns (states, total cost).
    """
    us = np.asarray(us, dtype=float)
    if us.shape != (problem.n_nodes, problem.n_u):
        raise ValueError(f"expected controls of shape {(problem.n_nodes, problem.n_u)}")
    if np.any(us < problem.u_lower - 1e-12) or np.any(us > problem.u_upper + 1e-12):
        raise ValueError("control sequence violates the box bounds")
    x = problem.x0 if x0 is None else np.asarray(x0, dtype=float)
    xs = np.empty((problem.n_nodes + 1, problem.n_x))
    xs[0] = x
    for k in range(problem.n_nodes):
        xs[k + 1] = problem.dynamics.step(k, xs[k], us[k])
        if not np.all(np.isfinite(xs[k + 1])):
            raise RolloutDiverged(f"non-finite state at node {k + 1}")
    return xs, float(problem.cost.value(xs, us))


def _box_direction(Quu, Qu, Qux, u, lb, ub):
    """Feedforward step and gains respecting the box, by clamped directions.

    Solves the unconstrained Newton step, clamps coordinates that would leave
    the box, re-solves the free block given the clamped values (repeated until
    the active set settles), and zeroes the gain rows of active coordinates.
    Raises np.linalg.LinAlgError if the free block is not positive definite.
    """
    nu = Qu.size
    np.linalg.cholesky(Quu)  # definiteness check
    sol = np.linalg.solve(Quu, np.concatenate([Qu[:, None], Qux], axis=1))
    k_ff = -sol[:, 0]
    u_new = u + k_ff
    if np.all(u_new > lb) and np.all(u_new < ub):
        return k_ff, -sol[:, 1:]
    active = np.zeros(nu, dtype=bool)
    for _ in range(nu):
        u_new = u + k_ff
        hit_lo = u_new <= lb
        hit_hi = u_new >= ub
        new_active = (hit_lo | hit_hi) & ~active
        k_ff[hit_lo] = lb[hit_lo] - u[hit_lo]
        k_ff[hit_hi] = ub[hit_hi] - u[hit_hi]
        if not new_active.any():
            break
        active |= new_active
        free = ~active
        if not free.any():
            break
        rhs = Qu[free] + Quu[np.ix_(free, active)] @ k_ff[active]
        k_ff[free] = -np.linalg.solve(Quu[np.ix_(free, free)], rhs)
    K = np.zeros((nu, Qux.shape[1]))
    free = ~active
    if free.any():
        K[free] = -np.linalg.solve(Quu[np.ix_(free, free)], Qux[free])
    return k_ff, K


@dataclass
class _BackwardResult:
    k: np.ndarray  # (N, nu) feedforward
    K: np.ndarray  # (N, nu, nx) feedback gains
    dV1: float  # sum k'Qu
    dV2: float  # sum k'Quu k


def backward_pass(
    problem: OcpProblem, xs: np.ndarray, us: np.ndarray, reg: float = 0.0
) -> _BackwardResult:
    """Riccati-style recursion with Levenberg regularization and box clamping.

    Raises BackwardPassFailed when the regularized control Hessian is not
    positive definite (callers escalate the regularization and retry).
    """
    cd = problem.cost.derivatives(xs, us)
    N, nu, nx = problem.n_nodes, problem.n_u, problem.n_x
    ks = np.zeros((N, nu))
    Ks = np.zeros((N, nu, nx))
    Vx = cd.phi_x.copy()
    Vxx = cd.phi_xx.copy()
    dV1 = dV2 = 0.0
    eye = np.eye(nu)
    for k in range(N - 1, -1, -1):
        A, B = problem.dynamics.jacobians(k, xs[k], us[k])
        Qx = cd.lx[k] + A.T @ Vx
        Qu = cd.lu[k] + B.T @ Vx
        Qxx = cd.lxx[k] + A.T @ Vxx @ A
        Quu = cd.luu[k] + B.T @ Vxx @ B
        Qux = cd.lux[k] + B.T @ Vxx @ A
        try:
            k_ff, K = _box_direction(Quu + reg * eye, Qu, Qux, us[k], problem.u_lower[k], problem.u_upper[k])
        except np.linalg.LinAlgError as exc:
            raise BackwardPassFailed(f"indefinite control Hessian at node {k}") from exc
        ks[k] = k_ff
        Ks[k] = K
        dV1 += float(k_ff @ Qu)
        dV2 += float(k_ff @ Quu @ k_ff)
        Vx = Qx + K.T @ (Quu @ k_ff + Qu) + Qux.T @ k_ff
        Vxx = Qxx + K.T @ Quu @ K + K.T @ Qux + Qux.T @ K
        Vxx = 0.5 * (Vxx + Vxx.T)
        if not (np.all(np.isfinite(Vx)) and np.all(np.isfinite(Vxx))):
            raise BackwardPassFailed(f"non-finite value function at node {k}")
    return _BackwardResult(ks, Ks, dV1, dV2)


def expected_decrease(bp: _BackwardResult, alpha: float = 1.0) -> float:
    """Model-predicted cost decrease for a step of length alpha (positive = improvement)."""
    return -(alpha * bp.dV1 + 0.5 * alpha**2 * bp.dV2)


def forward_pass(
    problem: OcpProblem,
    xs: np.ndarray,
    us: np.ndarray,
    cost: float,
    bp: _BackwardResult,
    alphas: np.ndarray,
    armijo: float = 0.1,
):
    """Line search over step lengths; controls are clamped to the box after the
    policy update. The first step achieving armijo * expected decrease wins.

    Returns (xs_new, us_new, cost_new, alpha); raising LineSearchFailed when
    every step length is rejected.
    """
    N = problem.n_nodes
    xs_new = np.empty_like(xs)
    us_new = np.empty_like(us)
    for alpha in alphas:
        xs_new[0] = xs[0]
        diverged = False
        for k in range(N):
            du = alpha * bp.k[k] + bp.K[k] @ (xs_new[k] - xs[k])
            us_new[k] = np.clip(us[k] + du, problem.u_lower[k], problem.u_upper[k])
            xs_new[k + 1] = problem.dynamics.step(k, xs_new[k], us_new[k])
            if not np.all(np.isfinite(xs_new[k + 1])):
                diverged = True
                break
        if diverged:
            continue
        new_cost = float(problem.cost.value(xs_new, us_new))
        if not np.isfinite(new_cost):
            continue
        expected = expected_decrease(bp, alpha)
        actual = cost - new_cost
        if expected > 0:
            if actual >= armijo * expected:
                return xs_new.copy(), us_new.copy(), new_cost, float(alpha)
        elif actual > 0:
            # Model predicts no decrease (e.g. fully clamped); accept any improvement.
            return xs_new.copy(), us_new.copy(), new_cost, float(alpha)
    raise LineSearchFailed("no step length accepted")


def solve(problem: OcpProblem, us_init=None, settings: SolverSettings | None = None) -> Solution:
    """Iterate backward/forward passes with penalty continuation until the
    expected decrease falls below the convergence threshold, the iteration cap
    is hit, or regularization maxes out. Always returns the best trajectory
    found, with diagnostics; failures are encoded in the convergence flag."""
    settings = settings or SolverSettings()
    N, nu = problem.n_nodes, problem.n_u
    if us_init is None:
        us = np.clip(np.zeros((N, nu)), problem.u_lower, problem.u_upper)
    else:
        us = np.clip(np.asarray(us_init, dtype=float), problem.u_lower, problem.u_upper)

    has_penalty = hasattr(problem.cost, "set_penalty_scale")
    rho = settings.penalty_initial
    if has_penalty:
        problem.cost.set_penalty_scale(rho)

    xs, cost = rollout(problem, us)
    trace = [cost]
    reg = settings.reg_init
    gains = np.zeros((N, nu, problem.n_x))
    feedforward = np.zeros((N, nu))
    converged = False
    status = "iteration cap"
    iterations = 0

    while iterations < settings.max_iterations:
        iterations += 1
        bp = None
        while True:
            try:
                bp = backward_pass(problem, xs, us, reg)
                break
            except BackwardPassFailed:
                reg *= settings.reg_factor
                if reg > settings.reg_max:
                    status = "backward pass failed at max regularization"
                    break
        if bp is None:
            break
        gains, feedforward = bp.K, bp.k

        if expected_decrease(bp) < settings.convergence_tol:
            if has_penalty and rho < settings.penalty_cap:
                viol = violations_of(problem, xs, us)
                if viol and max(viol.values()) > settings.violation_tol:
                    rho *= settings.penalty_multiplier
                    problem.cost.set_penalty_scale(rho)
                    cost = float(problem.cost.value(xs, us))
                    trace.append(cost)
                    continue
            converged = True
            status = "converged"
            break

        try:
            xs, us, new_cost, _alpha = forward_pass(
                problem, xs, us, cost, bp, settings.alphas(), settings.armijo
            )
        except LineSearchFailed:
            reg *= settings.reg_factor
            if reg > settings.reg_max:
                status = "line search failed at max regularization"
                break
            continue
        assert new_cost <= cost + 1e-12, "accepted iteration increased the cost"
        cost = new_cost
        trace.append(cost)
        reg = max(reg / settings.reg_factor, settings.reg_init)

    return Solution(
        xs=xs,
        us=us,
        gains=gains,
        feedforward=feedforward,
        cost=cost,
        violations=violations_of(problem, xs, us),
        iterations=iterations,
        converged=converged,
        status=status,
        cost_trace=trace,
    )


def violations_of(problem: OcpProblem, xs, us) -> dict:
    """Constraint-violation norms from the cost model, when it reports them."""
    if hasattr(problem.cost, "violations"):
        return dict(problem.cost.violations(xs, us))
    return {}
