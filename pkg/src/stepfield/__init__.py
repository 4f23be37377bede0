"""Footstep planning over polygonal terrain.

A reduced legged-robot model, a box-controls DDP trajectory optimizer, and a
contact-surface penalty built from boundary potentials and winding numbers,
assembled into a receding-horizon planner with a live teleoperation boundary.
"""

from .geometry import (
    BOUNDARY_TOL,
    DegeneratePolygon,
    PointLocation,
    Polygon2,
    SurfacePatch,
    TerrainModel,
    ValidationReport,
    distance_to_boundary,
    point_in_polygon_raycast,
    signed_area,
    validate_polygon,
)
from .field import (
    BatchFieldEval,
    DegenerateSegment,
    DivergentPotential,
    FieldEval,
    FieldGrid,
    GridTooLarge,
    NonConvergent,
    VertexSingularity,
    evaluate_points,
    field_grid,
    oracle_quadrature_potential,
    oracle_winding_quadrature,
    polygon_potential,
    segment_potential,
    terrain_penalty,
    terrain_penalty_gradient,
    winding_number,
)

__version__ = "0.1.0"

__all__ = [
    "BOUNDARY_TOL",
    "BatchFieldEval",
    "DegeneratePolygon",
    "DegenerateSegment",
    "DivergentPotential",
    "FieldEval",
    "FieldGrid",
    "GridTooLarge",
    "NonConvergent",
    "PointLocation",
    "Polygon2",
    "SurfacePatch",
    "TerrainModel",
    "ValidationReport",
    "VertexSingularity",
    "distance_to_boundary",
    "evaluate_points",
    "field_grid",
    "oracle_quadrature_potential",
    "oracle_winding_quadrature",
    "point_in_polygon_raycast",
    "polygon_potential",
    "segment_potential",
    "signed_area",
    "terrain_penalty",
    "terrain_penalty_gradient",
    "validate_polygon",
    "winding_number",
]
