import numpy as np
import pytest

from stepfield.geometry import Polygon2, SurfacePatch, TerrainModel


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def unit_square():
    return Polygon2([(0, 0), (1, 0), (1, 1), (0, 1)])


@pytest.fixture
def unit_square_terrain(unit_square):
    return TerrainModel((SurfacePatch(unit_square, 0.0, 1.0, "sq"),))


@pytest.fixture
def two_square_terrain():
    """Two disjoint unit squares with a 0.5 m gap, like the classic two-surface figure."""
    left = Polygon2([(0, 0), (1, 0), (1, 1), (0, 1)])
    right = Polygon2([(1.5, 0), (2.5, 0), (2.5, 1), (1.5, 1)])
    return TerrainModel(
        (SurfacePatch(left, 0.0, 1.0, "left"), SurfacePatch(right, 0.0, 1.0, "right"))
    )


def random_star_polygon(rng, n_min=4, n_max=12, r_min=0.3, r_max=1.5, center=None):
    """Random simple polygon: star-shaped radii over sorted angles, CCW."""
    n = int(rng.integers(n_min, n_max + 1))
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    # Spread angles so no two vertices nearly coincide.
    angles = angles + np.linspace(0, 2 * np.pi, n, endpoint=False)
    angles = np.sort(angles % (2 * np.pi))
    radii = rng.uniform(r_min, r_max, n)
    if center is None:
        center = rng.uniform(-2, 2, 2)
    verts = center + np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    return Polygon2(verts)
