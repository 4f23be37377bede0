"""Polygon and terrain primitives.

Contains the basic 2D types the rest of the library is built on (polygons,
contact patches, terrain models) together with brute-force geometric tests
(ray casting, boundary distance) that serve as independent checks on the
analytic field code.

Polygons are stored open: the closing edge from the last vertex back to the
first is implicit. Orientation is not forced at construction; counter-clockwise
is the convention the inside test assumes, so validation warns on clockwise
input rather than silently reorienting.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

# Absolute tolerance for "on the boundary" decisions, in meters. Far below any
# physical foot-placement precision.
BOUNDARY_TOL = 1e-9


class DegeneratePolygon(ValueError):
    """Raised when an operation requires a polygon with at least 3 vertices."""


class PointLocation(enum.Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    BOUNDARY = "boundary"


def _as_vertex_array(vertices) -> np.ndarray:
    arr = np.asarray(vertices, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) vertex array, got shape {arr.shape}")
    return arr


class Polygon2:
    """A closed polygonal curve in the plane, stored as open vertex list.

    Parameters
    ----------
    vertices : array-like
        Shape (n, 2), n >= 3, finite coordinates. The edge from the last
        vertex back to the first is implicit.
    """

    __slots__ = ("vertices",)

    def __init__(self, vertices) -> None:
        arr = _as_vertex_array(vertices)
        if arr.shape[0] < 3:
            raise DegeneratePolygon(f"polygon needs >= 3 vertices, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("polygon vertices must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        self.vertices = arr

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (starts, ends) arrays of shape (n, 2), including the closing edge."""
        a = self.vertices
        b = np.roll(self.vertices, -1, axis=0)
        return a, b

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def translated(self, offset) -> "Polygon2":
        return Polygon2(self.vertices + np.asarray(offset, dtype=float))

    def reversed(self) -> "Polygon2":
        return Polygon2(self.vertices[::-1])

    def __repr__(self) -> str:
        return f"Polygon2({self.vertices.tolist()})"


@dataclass(frozen=True)
class SurfacePatch:
    """A candidate contact surface: a polygon at constant height.

    Attributes
    ----------
    polygon : Polygon2
        Footprint in world XY.
    height : float
        Constant z of the surface, meters.
    friction : float
        Friction coefficient, in (0, 2].
    id : str
        Opaque identifier; ties in planner logs resolve by ascending id.
    """

    polygon: Polygon2
    height: float
    friction: float
    id: str

    def __post_init__(self) -> None:
        if not (0.0 < self.friction <= 2.0):
            raise ValueError(f"patch {self.id!r}: friction must be in (0, 2], got {self.friction}")
        if not np.isfinite(self.height):
            raise ValueError(f"patch {self.id!r}: height must be finite")


@dataclass(frozen=True)
class TerrainModel:
    """A collection of candidate contact patches.

    Patches may be non-convex, overlapping, or disjoint. An empty terrain is
    permitted for field queries (the penalty degenerates to an infinite
    sentinel) but not for planning.
    """

    patches: tuple[SurfacePatch, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "patches", tuple(self.patches))

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    def patch_by_id(self, patch_id: str) -> SurfacePatch:
        for p in self.patches:
            if p.id == patch_id:
                return p
        raise KeyError(patch_id)

    def sorted_patches(self) -> list[SurfacePatch]:
        return sorted(self.patches, key=lambda p: p.id)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.patches:
            raise ValueError("empty terrain has no bounds")
        los = [p.polygon.bounds()[0] for p in self.patches]
        his = [p.polygon.bounds()[1] for p in self.patches]
        return np.min(los, axis=0), np.max(his, axis=0)


@dataclass
class ValidationReport:
    """Report-style result of polygon validation; never raises."""

    vertex_count: int
    signed_area: float
    orientation: str  # "ccw", "cw" or "degenerate"
    degenerate_edges: list[int] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.errors


def signed_area(poly) -> float:
    """Shoelace area of a polygon; sign encodes orientation (CCW positive).

    Accepts a Polygon2 or a raw (n, 2) vertex array. Raises DegeneratePolygon
    for fewer than 3 vertices.
    """
    verts = poly.vertices if isinstance(poly, Polygon2) else _as_vertex_array(poly)
    if verts.shape[0] < 3:
        raise DegeneratePolygon(f"signed_area needs >= 3 vertices, got {verts.shape[0]}")
    x = verts[:, 0]
    y = verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def validate_polygon(poly) -> ValidationReport:
    """Check polygon invariants and report, without raising.

    A polygon is accepted iff it has >= 3 finite vertices, no two consecutive
    vertices closer than BOUNDARY_TOL, and nonzero signed area. Clockwise
    orientation is legal but draws a warning because the winding inside test
    assumes positive winding.
    """
    try:
        verts = poly.vertices if isinstance(poly, Polygon2) else _as_vertex_array(poly)
    except ValueError as exc:
        return ValidationReport(0, 0.0, "degenerate", errors=[str(exc)])

    n = verts.shape[0]
    report = ValidationReport(vertex_count=n, signed_area=0.0, orientation="degenerate")
    if not np.all(np.isfinite(verts)):
        report.errors.append("non-finite vertex coordinates")
        return report
    if n < 3:
        report.errors.append(f"too few vertices ({n} < 3)")
        return report

    edge_lengths = np.linalg.norm(np.roll(verts, -1, axis=0) - verts, axis=1)
    report.degenerate_edges = [int(i) for i in np.nonzero(edge_lengths < BOUNDARY_TOL)[0]]
    if report.degenerate_edges:
        report.errors.append(f"degenerate edges (length < {BOUNDARY_TOL}): {report.degenerate_edges}")

    area = signed_area(verts)
    report.signed_area = area
    if area == 0.0:
        report.errors.append("zero signed area")
    else:
        report.orientation = "ccw" if area > 0 else "cw"
        if area < 0:
            report.warnings.append("clockwise orientation: winding inside test assumes CCW")
    return report


def _segment_distances(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Distances from point p to each segment [a_i, b_i]; a, b are (n, 2)."""
    u = b - a
    w = p[None, :] - a
    uu = np.einsum("ij,ij->i", u, u)
    t = np.einsum("ij,ij->i", w, u) / np.where(uu > 0, uu, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * u
    return np.linalg.norm(p[None, :] - closest, axis=1)


def distance_to_boundary(poly: Polygon2, p) -> float:
    """Unsigned minimum Euclidean distance from p to the polygon boundary."""
    p = np.asarray(p, dtype=float).reshape(2)
    a, b = poly.edges()
    return float(_segment_distances(a, b, p).min())


def nearest_boundary_point(poly: Polygon2, p) -> tuple[np.ndarray, float]:
    """Closest point on the polygon boundary to p, with its distance."""
    p = np.asarray(p, dtype=float).reshape(2)
    a, b = poly.edges()
    u = b - a
    uu = np.einsum("ij,ij->i", u, u)
    t = np.einsum("ij,ij->i", p[None, :] - a, u) / np.where(uu > 0, uu, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * u
    dists = np.linalg.norm(p[None, :] - closest, axis=1)
    i = int(np.argmin(dists))
    return closest[i], float(dists[i])


def point_in_polygon_raycast(poly: Polygon2, p) -> PointLocation:
    """Classify a point against a polygon by crossing-number ray casting.

    Returns BOUNDARY when the point lies within BOUNDARY_TOL of any edge;
    otherwise casts a ray in +x and counts crossings. Independent of the
    winding-number machinery, so the two can check each other.
    """
    p = np.asarray(p, dtype=float).reshape(2)
    a, b = poly.edges()
    if _segment_distances(a, b, p).min() <= BOUNDARY_TOL:
        return PointLocation.BOUNDARY

    ya, yb = a[:, 1], b[:, 1]
    # Half-open rule on y avoids double-counting vertices hit by the ray.
    straddles = (ya <= p[1]) != (yb <= p[1])
    crossings = 0
    for i in np.nonzero(straddles)[0]:
        t = (p[1] - ya[i]) / (yb[i] - ya[i])
        x_cross = a[i, 0] + t * (b[i, 0] - a[i, 0])
        if x_cross > p[0]:
            crossings += 1
    return PointLocation.INSIDE if crossings % 2 == 1 else PointLocation.OUTSIDE
