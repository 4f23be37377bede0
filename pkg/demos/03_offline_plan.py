"""One full-horizon solve of the gap-crossing problem, offline.

Assembles the 34-node problem at t = 0 for the bundled trot-over-gap scenario
and solves it to convergence (no 2-iteration MPC cap), then prints where the
optimizer decided to put the upcoming touchdowns.
"""

import numpy as np

from stepfield import io as sio
from stepfield.field import terrain_penalty
from stepfield.planner import assemble_problem, default_guess
from stepfield.solver import SolverSettings, solve

scenario = sio.bundled_scenario("trot_gap30")
problem, info = assemble_problem(scenario, scenario.initial_state, 0.0)
print(f"{scenario.name}: {problem.n_nodes} nodes, state dim {problem.n_x}, control dim {problem.n_u}")

sol = solve(problem, default_guess(scenario, info),
            SolverSettings(max_iterations=scenario.mpc.offline_iterations))
print(f"solved: {sol.status} after {sol.iterations} iterations, cost {sol.cost:.4f}")
print("violations:", {k: round(v, 6) for k, v in sol.violations.items()})

print("\nplanned touchdowns in this horizon:")
for node, foot, t in info.planned_touchdown_nodes:
    xy = sol.xs[node][6 + 3 * foot: 6 + 3 * foot + 2]
    pen = terrain_penalty(scenario.terrain, xy).penalty
    print(f"  t={t:.3f}s foot {foot}: ({xy[0]:+.3f}, {xy[1]:+.3f})  penalty {pen:.4f}")

stance0 = info.stance[0]
forces = sol.us[0].reshape(-1, 3)
print("\nfirst-node stance forces [N]:")
for i, in_stance in enumerate(stance0):
    if in_stance:
        print(f"  foot {i}: fx={forces[i, 0]:+7.2f} fy={forces[i, 1]:+7.2f} fz={forces[i, 2]:7.2f}")
