"""Winding numbers as the inside-a-surface test.

The winding number counts how many times a patch boundary wraps around a
query point, so it keeps working where crossing parity gets awkward:
overlapping patches simply add, and clockwise input flips the sign.
"""

import numpy as np

from stepfield.field import winding_number, oracle_winding_quadrature
from stepfield.geometry import Polygon2, point_in_polygon_raycast

square = Polygon2([(0, 0), (2, 0), (2, 2), (0, 2)])
shifted = Polygon2([(1, 1), (3, 1), (3, 3), (1, 3)])

for label, p in [("center of A", (0.5, 0.5)), ("overlap", (1.5, 1.5)),
                 ("outside both", (4.0, 0.5)), ("edge of A", (1.0, 0.0))]:
    wa = winding_number(square, p)
    wb = winding_number(shifted, p)
    print(f"{label:14s} p={p}: wind_A={wa:+.2f} wind_B={wb:+.2f} sum={wa + wb:+.2f}"
          f"  raycast_A={point_in_polygon_raycast(square, p).value}")

print("\nclockwise square flips the sign:",
      winding_number(square.reversed(), (0.5, 0.5)))

p = (0.33, 0.77)
print(f"\nanalytic vs angular quadrature at {p}: "
      f"{winding_number(square, p):.12f} vs {oracle_winding_quadrature(square, p):.12f}")

# a non-convex star still classifies cleanly
rng = np.random.default_rng(3)
angles = np.sort(rng.uniform(0, 2 * np.pi, 9))
radii = rng.uniform(0.4, 1.5, 9)
star = Polygon2(np.column_stack([radii * np.cos(angles), radii * np.sin(angles)]))
hits = sum(winding_number(star, rng.uniform(-2, 2, 2)) >= 0.5 for _ in range(2000))
print(f"\nrandom star polygon: {hits} of 2000 random points classified inside")
