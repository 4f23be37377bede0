import numpy as np
import pytest

from stepfield.geometry import (
    DegeneratePolygon,
    PointLocation,
    Polygon2,
    SurfacePatch,
    TerrainModel,
    distance_to_boundary,
    point_in_polygon_raycast,
    signed_area,
    validate_polygon,
)
from stepfield.field import winding_number

from conftest import random_star_polygon


def test_signed_area_unit_square(unit_square):
    assert signed_area(unit_square) == pytest.approx(1.0)


def test_signed_area_triangle():
    assert signed_area([(0, 0), (1, 0), (0, 1)]) == pytest.approx(0.5)


def test_signed_area_reversed_square(unit_square):
    assert signed_area(unit_square.reversed()) == pytest.approx(-1.0)


def test_signed_area_rejects_degenerate():
    with pytest.raises(DegeneratePolygon):
        signed_area([(0, 0), (1, 1)])


def test_validate_unit_square(unit_square):
    report = validate_polygon(unit_square)
    assert report.valid
    assert report.orientation == "ccw"
    assert report.signed_area == pytest.approx(1.0)
    assert report.vertex_count == 4
    assert not report.warnings


def test_validate_cw_square_warns(unit_square):
    report = validate_polygon(unit_square.reversed())
    assert report.valid
    assert report.orientation == "cw"
    assert report.signed_area == pytest.approx(-1.0)
    assert report.warnings


def test_validate_too_few_vertices():
    report = validate_polygon([(0, 0), (1, 0)])
    assert not report.valid
    assert any("too few" in e for e in report.errors)


def test_validate_degenerate_edge():
    report = validate_polygon([(0, 0), (1, 0), (1, 1e-12), (0, 1)])
    assert not report.valid
    assert 1 in report.degenerate_edges


def test_raycast_basic(unit_square):
    assert point_in_polygon_raycast(unit_square, (0.5, 0.5)) is PointLocation.INSIDE
    assert point_in_polygon_raycast(unit_square, (2, 0.5)) is PointLocation.OUTSIDE
    assert point_in_polygon_raycast(unit_square, (0.5, 0)) is PointLocation.BOUNDARY


def test_distance_to_boundary(unit_square):
    assert distance_to_boundary(unit_square, (0.5, 0.5)) == pytest.approx(0.5)
    assert distance_to_boundary(unit_square, (2, 0.5)) == pytest.approx(1.0)
    assert distance_to_boundary(unit_square, (0, 0)) == 0.0


def test_signed_area_translation_and_reversal(rng):
    for _ in range(100):
        poly = random_star_polygon(rng)
        area = signed_area(poly)
        shift = rng.uniform(-5, 5, 2)
        assert signed_area(poly.translated(shift)) == pytest.approx(area, rel=1e-9)
        assert signed_area(poly.reversed()) == pytest.approx(-area, rel=1e-9)


def test_raycast_agrees_with_winding(rng):
    # Cross-module oracle property: for simple CCW polygons the crossing-number
    # test and the winding inside test must classify identically away from the
    # boundary.
    for _ in range(50):
        poly = random_star_polygon(rng)
        lo, hi = poly.bounds()
        pts = rng.uniform(lo - 0.5, hi + 0.5, (40, 2))
        for p in pts:
            if distance_to_boundary(poly, p) < 1e-6:
                continue
            loc = point_in_polygon_raycast(poly, p)
            wind = winding_number(poly, p)
            assert (wind >= 0.5) == (loc is PointLocation.INSIDE)


def test_distance_is_lipschitz(rng):
    for _ in range(100):
        poly = random_star_polygon(rng)
        p, q = rng.uniform(-4, 4, (2, 2))
        dp = distance_to_boundary(poly, p)
        dq = distance_to_boundary(poly, q)
        assert abs(dp - dq) <= np.linalg.norm(p - q) + 1e-12


def test_polygon_requires_three_vertices():
    with pytest.raises(DegeneratePolygon):
        Polygon2([(0, 0), (1, 0)])


def test_polygon_vertices_read_only(unit_square):
    with pytest.raises(ValueError):
        unit_square.vertices[0, 0] = 5.0


def test_patch_friction_bounds(unit_square):
    with pytest.raises(ValueError):
        SurfacePatch(unit_square, 0.0, 0.0, "bad")
    with pytest.raises(ValueError):
        SurfacePatch(unit_square, 0.0, 2.5, "bad")


def test_terrain_bounds(two_square_terrain):
    lo, hi = two_square_terrain.bounds()
    assert np.allclose(lo, (0, 0))
    assert np.allclose(hi, (2.5, 1))
    with pytest.raises(ValueError):
        TerrainModel(()).bounds()
