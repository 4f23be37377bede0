"""Contact-surface penalty field over polygonal terrain.

The penalty at a query point is built from two ingredients evaluated over
every boundary segment of every patch:

* an inverse-square boundary potential with a closed form per segment
  (each segment contributes ``-(atan(c/e) - atan(d/e))/e``, which equals
  the integral of ``1/|r(s)|^2`` along the segment),
* a winding number (sum of signed vertex angles), whose value >= 1/2 marks
  a point as inside a patch.

Outside all patches the penalty is ``sqrt(N / V)`` where N is the total
segment count and V the total potential; inside (winding >= 1/2) it is zero.
The potential diverges on boundary lines, so the penalty goes to zero
continuously as a point approaches a patch from outside. Divergent and
near-divergent queries are clamped to the zero-penalty guard case.

The analytic gradient is assembled by the chain rule through the c/d/e terms
of the per-segment closed form. A collinear series branch takes over when the
query point is within a hair of a segment's supporting line, where the atan
form loses meaning.

``oracle_quadrature_potential`` and ``oracle_winding_quadrature`` are slow,
independent adaptive-quadrature references used by the test suite; they share
no code with the analytic paths they check.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .geometry import Polygon2, TerrainModel

# Slack absorbing atan2 rounding in the "winding >= 1/2" inside test.
WINDING_SLACK = 1e-12

# Default cap on field grid size.
GRID_CELL_CAP = 4_000_000


class DivergentPotential(ArithmeticError):
    """Query point lies on (or numerically on) a boundary segment."""


class DegenerateSegment(ValueError):
    """Segment endpoints coincide."""


class VertexSingularity(ArithmeticError):
    """Winding number queried exactly at a polygon vertex."""


class GridTooLarge(ValueError):
    """Requested field grid exceeds the cell cap."""


class NonConvergent(ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""


@dataclass(frozen=True)
class FieldEval:
    """Penalty value and diagnostics at a single query point.

    penalty is nonnegative and zero inside patches; gradient is d(penalty)/d(x, y)
    and is the zero vector in the inside and guard cases.
    """

    penalty: float
    gradient: np.ndarray
    total_potential: float
    total_winding: float
    segment_count: int
    inside: bool


@dataclass(frozen=True)
class BatchFieldEval:
    """Vectorized field evaluation at m query points (arrays indexed by point)."""

    penalty: np.ndarray  # (m,)
    gradient: np.ndarray  # (m, 2)
    total_potential: np.ndarray  # (m,)
    total_winding: np.ndarray  # (m,)
    segment_count: int
    inside: np.ndarray  # (m,) bool


@dataclass(frozen=True)
class FieldGrid:
    """Row-major grid of field evaluations at cell centers."""

    xs: np.ndarray  # (nx,) cell-center x
    ys: np.ndarray  # (ny,) cell-center y
    penalty: np.ndarray  # (ny, nx)
    winding: np.ndarray  # (ny, nx)
    potential: np.ndarray  # (ny, nx)
    inside: np.ndarray  # (ny, nx) bool


def _cde(a: np.ndarray, b: np.ndarray, p: np.ndarray):
    """The c, d, e terms of the closed-form segment potential.

    a, b: (s, 2) segment endpoints; p: (m, 2) query points.
    Returns (c, d, e) of shape (m, s):
        c = (a-b).(b-p),  d = (a-b).(a-p),  e = [a x b] - [a x p] + [b x p]
    """
    ab = a - b  # (s, 2)
    rb = b[None, :, :] - p[:, None, :]  # (m, s, 2)
    ra = a[None, :, :] - p[:, None, :]
    c = np.einsum("sk,msk->ms", ab, rb)
    d = np.einsum("sk,msk->ms", ab, ra)
    # [a x b] - [a x p] + [b x p] == [(a-p) x (b-p)]
    e = ra[:, :, 0] * rb[:, :, 1] - ra[:, :, 1] * rb[:, :, 0]
    return c, d, e


def _segment_eval(a: np.ndarray, b: np.ndarray, p: np.ndarray, want_gradient: bool):
    """Per-segment potential (and optionally its gradient) for all point/segment pairs.

    Returns (V, grad, divergent) with V of shape (m, s), grad (m, s, 2) or None,
    divergent (m, s) marking pairs where the potential blows up (point on the
    open segment or at a vertex).
    """
    c, d, e = _cde(a, b, p)
    scale = (
        np.linalg.norm(a, axis=1)[None, :]
        + np.linalg.norm(b, axis=1)[None, :]
        + np.linalg.norm(p, axis=1)[:, None]
        + 1.0
    )
    eps_e = 1e-9 * scale
    near_line = np.abs(e) < eps_e
    divergent = near_line & (c <= 0.0) & (d >= 0.0)
    collinear = near_line & ~divergent
    smooth = ~near_line

    V = np.zeros_like(c)
    with np.errstate(divide="ignore", invalid="ignore"):
        e_s = np.where(smooth, e, 1.0)
        V_smooth = -(np.arctan(c / e_s) - np.arctan(d / e_s)) / e_s
        c_c = np.where(collinear, c, 1.0)
        d_c = np.where(collinear, d, 1.0)
        V_coll = 1.0 / c_c - 1.0 / d_c
    V[smooth] = V_smooth[smooth]
    V[collinear] = V_coll[collinear]
    bad = ~np.isfinite(V)
    divergent |= bad
    V[bad] = 0.0

    if not want_gradient:
        return V, None, divergent

    # dV = Vc*dc + Vd*dd + Ve*de with dc/dp = dd/dp = b - a and
    # de/dp = (a_y - b_y, b_x - a_x).
    with np.errstate(divide="ignore", invalid="ignore"):
        Vc = np.where(smooth, -1.0 / (e * e + c * c), -1.0 / (c_c * c_c))
        Vd = np.where(smooth, 1.0 / (e * e + d * d), 1.0 / (d_c * d_c))
        Ve_smooth = (c / (e * e + c * c) - d / (e * e + d * d) - V) / e_s
        Ve_coll = (2.0 * e / 3.0) * (1.0 / d_c**3 - 1.0 / c_c**3)
    Ve = np.where(smooth, Ve_smooth, Ve_coll)

    ba = b - a  # (s, 2)
    ge = np.stack([a[:, 1] - b[:, 1], b[:, 0] - a[:, 0]], axis=1)  # (s, 2)
    grad = (Vc + Vd)[:, :, None] * ba[None, :, :] + Ve[:, :, None] * ge[None, :, :]
    grad[divergent] = 0.0
    grad[~np.isfinite(grad).all(axis=2)] = 0.0
    return V, grad, divergent


def _winding_terms(a: np.ndarray, b: np.ndarray, p: np.ndarray):
    """Signed angle subtended by each segment at each point, over 2*pi.

    Returns (terms, at_vertex) of shape (m, s); at_vertex flags exact vertex hits
    where the angle is undefined. A point on a segment's interior sees an
    ambiguous +-pi angle there; the principal-value convention (that term
    contributes zero, the remaining boundary sums to pi) makes edge-interior
    points come out at exactly 1/2.
    """
    ra = a[None, :, :] - p[:, None, :]
    rb = b[None, :, :] - p[:, None, :]
    cross = ra[:, :, 0] * rb[:, :, 1] - ra[:, :, 1] * rb[:, :, 0]
    dot = np.einsum("msk,msk->ms", ra, rb)
    at_vertex = (np.einsum("msk,msk->ms", ra, ra) == 0.0) | (
        np.einsum("msk,msk->ms", rb, rb) == 0.0
    )
    terms = np.arctan2(cross, dot) / (2.0 * np.pi)
    on_segment = (cross == 0.0) & (dot < 0.0)
    terms = np.where(on_segment, 0.0, terms)
    return terms, at_vertex


def segment_potential(a, b, p) -> float:
    """Closed-form potential contributed by one boundary segment.

    Equals the integral over s in [0, 1] of 1/|a + (b-a) s - p|^2. Symmetric in
    endpoint order. Raises DivergentPotential if p lies on the open segment
    (including its endpoints) and DegenerateSegment if a == b.
    """
    a = np.asarray(a, dtype=float).reshape(1, 2)
    b = np.asarray(b, dtype=float).reshape(1, 2)
    p = np.asarray(p, dtype=float).reshape(1, 2)
    if np.linalg.norm(b - a) < 1e-12 * (np.linalg.norm(a) + np.linalg.norm(b) + 1.0):
        raise DegenerateSegment("segment endpoints coincide")
    V, _, divergent = _segment_eval(a, b, p, want_gradient=False)
    if divergent[0, 0]:
        raise DivergentPotential("query point lies on the segment")
    return float(V[0, 0])


def polygon_potential(poly: Polygon2, p) -> float:
    """Sum of segment potentials over all edges of a polygon; strictly positive."""
    p = np.asarray(p, dtype=float).reshape(1, 2)
    a, b = poly.edges()
    V, _, divergent = _segment_eval(a, b, p, want_gradient=False)
    if divergent.any():
        raise DivergentPotential("query point lies on the polygon boundary")
    return float(V.sum())


def winding_number(poly: Polygon2, p) -> float:
    """Winding number of the polygon boundary around p, by signed-angle sum.

    1 inside / 0 outside for simple CCW polygons (sign flips for CW); exactly
    1/2 at edge-interior points. Raises VertexSingularity for p exactly at a
    vertex, where two angle terms are 0/0.
    """
    p = np.asarray(p, dtype=float).reshape(1, 2)
    a, b = poly.edges()
    terms, at_vertex = _winding_terms(a, b, p)
    if at_vertex.any():
        raise VertexSingularity("winding number undefined exactly at a vertex")
    return float(terms.sum())


class _TerrainArrays:
    """Stacked edge arrays for a terrain, cached per TerrainModel instance."""

    __slots__ = ("a", "b", "offsets", "n_segments", "patch_ids")

    def __init__(self, terrain: TerrainModel) -> None:
        starts, ends, offsets = [], [], [0]
        for patch in terrain.patches:
            a, b = patch.polygon.edges()
            starts.append(a)
            ends.append(b)
            offsets.append(offsets[-1] + a.shape[0])
        if starts:
            self.a = np.concatenate(starts, axis=0)
            self.b = np.concatenate(ends, axis=0)
        else:
            self.a = np.zeros((0, 2))
            self.b = np.zeros((0, 2))
        self.offsets = np.asarray(offsets[:-1], dtype=int)
        self.n_segments = self.a.shape[0]
        self.patch_ids = [p.id for p in terrain.patches]


_terrain_cache: "weakref.WeakKeyDictionary[TerrainModel, _TerrainArrays]" = (
    weakref.WeakKeyDictionary()
)


def _arrays_for(terrain: TerrainModel) -> _TerrainArrays:
    arrays = _terrain_cache.get(terrain)
    if arrays is None:
        arrays = _TerrainArrays(terrain)
        _terrain_cache[terrain] = arrays
    return arrays


def evaluate_points(terrain: TerrainModel, points, want_gradient: bool = True) -> BatchFieldEval:
    """Vectorized penalty evaluation at an (m, 2) array of query points.

    This is the workhorse behind terrain_penalty, field_grid and the planner's
    per-node cost terms. Points on (or numerically on) boundary segments fall
    into the zero-penalty guard case with zero gradient; vertex hits in the
    winding sum are folded into the same guard.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    m = P.shape[0]
    arrays = _arrays_for(terrain)
    n_seg = arrays.n_segments

    if n_seg == 0:
        # Empty terrain: unplannable sentinel rather than an error.
        return BatchFieldEval(
            penalty=np.full(m, np.inf),
            gradient=np.zeros((m, 2)),
            total_potential=np.zeros(m),
            total_winding=np.zeros(m),
            segment_count=0,
            inside=np.zeros(m, dtype=bool),
        )

    V_seg, grad_seg, div_seg = _segment_eval(arrays.a, arrays.b, P, want_gradient)
    wind_terms, at_vertex = _winding_terms(arrays.a, arrays.b, P)
    wind_terms = np.where(at_vertex, 0.0, wind_terms)

    V_tot = V_seg.sum(axis=1)
    wind_tot = wind_terms.sum(axis=1)
    divergent = div_seg.any(axis=1) | at_vertex.any(axis=1)

    inside = wind_tot >= 0.5 - WINDING_SLACK
    guard = divergent | (V_tot <= 0.0)
    outside = ~inside & ~guard

    penalty = np.zeros(m)
    gradient = np.zeros((m, 2))
    if outside.any():
        ratio = n_seg / V_tot[outside]
        penalty[outside] = np.sqrt(ratio)
        if want_gradient:
            grad_V = grad_seg.sum(axis=1)  # (m, 2)
            coef = -0.5 * np.sqrt(float(n_seg)) * V_tot[outside] ** -1.5
            gradient[outside] = coef[:, None] * grad_V[outside]

    V_tot = np.where(divergent, np.inf, V_tot)
    inside = inside | divergent  # boundary contact counts as placed on the surface
    return BatchFieldEval(
        penalty=penalty,
        gradient=gradient,
        total_potential=V_tot,
        total_winding=wind_tot,
        segment_count=int(n_seg),
        inside=inside,
    )


def terrain_penalty(terrain: TerrainModel, p) -> FieldEval:
    """Contact-surface penalty with diagnostics at a single point.

    Zero inside any patch (total winding >= 1/2) and on boundaries (guard
    case); sqrt(N / V) outside where N counts boundary segments and V sums the
    boundary potential. Empty terrain yields an infinite sentinel.
    """
    batch = evaluate_points(terrain, np.asarray(p, dtype=float).reshape(1, 2))
    return FieldEval(
        penalty=float(batch.penalty[0]),
        gradient=batch.gradient[0].copy(),
        total_potential=float(batch.total_potential[0]),
        total_winding=float(batch.total_winding[0]),
        segment_count=batch.segment_count,
        inside=bool(batch.inside[0]),
    )


def terrain_penalty_gradient(terrain: TerrainModel, p) -> np.ndarray:
    """Exact gradient of the penalty; zero vector in the inside and guard cases."""
    batch = evaluate_points(terrain, np.asarray(p, dtype=float).reshape(1, 2))
    return batch.gradient[0].copy()


def field_grid(
    terrain: TerrainModel,
    bbox_min,
    bbox_max,
    resolution: float,
    cell_cap: int = GRID_CELL_CAP,
) -> FieldGrid:
    """Evaluate the penalty on a regular grid of cell centers covering a bbox.

    The cell size is the bbox extent divided by the cell count (the extent over
    resolution, rounded to the nearest count >= 1), so the cells tile the bbox
    exactly and a 1x1 grid evaluates at the bbox center.
    """
    lo = np.asarray(bbox_min, dtype=float).reshape(2)
    hi = np.asarray(bbox_max, dtype=float).reshape(2)
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if not np.all(hi > lo):
        raise ValueError("bbox must have positive extent in both axes")

    counts = np.maximum(1, np.rint((hi - lo) / resolution).astype(int))
    nx, ny = int(counts[0]), int(counts[1])
    if nx * ny > cell_cap:
        raise GridTooLarge(f"{nx} x {ny} = {nx * ny} cells exceeds cap {cell_cap}")

    dx = (hi[0] - lo[0]) / nx
    dy = (hi[1] - lo[1]) / ny
    xs = lo[0] + (np.arange(nx) + 0.5) * dx
    ys = lo[1] + (np.arange(ny) + 0.5) * dy
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])

    # Chunked so huge grids don't allocate an (m, s) matrix all at once.
    chunk = max(1, int(2e6 // max(1, _arrays_for(terrain).n_segments)))
    pen = np.empty(pts.shape[0])
    wind = np.empty(pts.shape[0])
    pot = np.empty(pts.shape[0])
    ins = np.empty(pts.shape[0], dtype=bool)
    for start in range(0, pts.shape[0], chunk):
        sl = slice(start, start + chunk)
        batch = evaluate_points(terrain, pts[sl], want_gradient=False)
        pen[sl] = batch.penalty
        wind[sl] = batch.total_winding
        pot[sl] = batch.total_potential
        ins[sl] = batch.inside

    shape = (ny, nx)
    return FieldGrid(
        xs=xs,
        ys=ys,
        penalty=pen.reshape(shape),
        winding=wind.reshape(shape),
        potential=pot.reshape(shape),
        inside=ins.reshape(shape),
    )


def oracle_quadrature_potential(a, b, p, tolerance: float = 1e-10) -> float:
    """Adaptive quadrature of the inverse-square kernel along a segment.

    Test-only reference for segment_potential; shares no code with it. Raises
    NonConvergent when p is on the segment or the integrator cannot reach the
    requested absolute tolerance.
    """
    a = np.asarray(a, dtype=float).reshape(2)
    b = np.asarray(b, dtype=float).reshape(2)
    p = np.asarray(p, dtype=float).reshape(2)
    u = b - a
    uu = float(u @ u)
    if uu == 0.0:
        raise DegenerateSegment("segment endpoints coincide")
    s_star = float(np.clip((p - a) @ u / uu, 0.0, 1.0))
    closest = a + s_star * u
    if np.linalg.norm(p - closest) < 1e-12 * (np.linalg.norm(a) + np.linalg.norm(b) + 1.0):
        raise NonConvergent("query point on the segment: integral diverges")

    def kernel(s: float) -> float:
        r = a + s * u - p
        return 1.0 / float(r @ r)

    breaks = [s_star] if 0.0 < s_star < 1.0 else None
    value, abserr = integrate.quad(
        kernel, 0.0, 1.0, points=breaks, epsabs=tolerance * 1e-2, epsrel=1e-12, limit=200
    )
    if abserr > max(tolerance, 1e-13 * abs(value)):
        raise NonConvergent(f"quadrature error estimate {abserr} above tolerance {tolerance}")
    return float(value)


def oracle_winding_quadrature(poly: Polygon2, p, tolerance: float = 1e-9) -> float:
    """Adaptive quadrature of the angular form d(theta)/2*pi around the polygon.

    Test-only reference for winding_number. Integrates cross(r, r')/|r|^2 per
    edge. Raises NonConvergent if p is numerically on the boundary.
    """
    p = np.asarray(p, dtype=float).reshape(2)
    a_all, b_all = poly.edges()
    total = 0.0
    for a, b in zip(a_all, b_all):
        u = b - a

        def dtheta(s: float, a=a, u=u) -> float:
            r = a + s * u - p
            rr = float(r @ r)
            return (r[0] * u[1] - r[1] * u[0]) / rr

        uu = float(u @ u)
        s_star = float(np.clip((p - a) @ u / uu, 0.0, 1.0)) if uu > 0 else 0.0
        closest = a + s_star * u
        if np.linalg.norm(p - closest) < 1e-12 * (np.linalg.norm(a) + np.linalg.norm(b) + 1.0):
            raise NonConvergent("query point on the boundary: angle form singular")
        breaks = [s_star] if 0.0 < s_star < 1.0 else None
        value, abserr = integrate.quad(
            dtheta, 0.0, 1.0, points=breaks, epsabs=tolerance * 1e-2, epsrel=1e-12, limit=200
        )
        if abserr > max(tolerance, 1e-12 * abs(value)):
            raise NonConvergent(f"quadrature error estimate {abserr} above tolerance")
        total += value
    return total / (2.0 * np.pi)
