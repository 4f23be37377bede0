"""Dynamic terrain: stair climbing and a 0.40 m jump.

Stairs (0.30 m deep, 0.10 m rise) are climbed with both trotting and pacing
gaits; the wide gap is crossed with a full-flight jumping gait and the torque
limit disabled, the way one would exercise high-torque hardware.
"""

from stepfield import io as sio
from stepfield.planner import run_closed_loop

for name in ("stairs_trot", "stairs_pace", "jump_gap40"):
    scenario = sio.bundled_scenario(name)
    log = run_closed_loop(scenario)
    s = log.summary()
    heights = sorted({round(e.z, 2) for e in log.touchdowns})
    print(f"{name}:")
    print(f"  {s['touchdowns']} touchdowns, {s['containment_fraction']:.0%} on candidate surfaces")
    print(f"  surface heights visited: {heights}")
    print(f"  final base position: ({s['final_base_xy'][0]:+.2f}, {s['final_base_xy'][1]:+.2f})")
    print(f"  mean solve {s['mean_solve_ms']:.1f} ms, degraded {s['degraded_fraction']:.1%}")
    print()
