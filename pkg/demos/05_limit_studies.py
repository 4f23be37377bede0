"""How actuation and friction limits reshape footstep placement.

Reruns the gap-crossing scenario three times, changing one limit at a time:
the torque-proxy cap halved (40 -> 20 N m) and the friction coefficient
dropped (1.0 -> 0.14). With the tighter torque budget the stance feet stay
closer to the hips; with slick ground the tangential force fraction shrinks.
"""

from dataclasses import replace

from stepfield import io as sio
from stepfield.model import LimitSet
from stepfield.planner import run_closed_loop

base = sio.bundled_scenario("trot_gap30")

runs = {
    "default (tau 40, mu 1.0)": base,
    "torque halved (tau 20)": replace(base, limits=LimitSet(torque_proxy_max=20.0)),
    "low friction (mu 0.14)": replace(base, limits=LimitSet(mu=0.14)),
}

results = {name: run_closed_loop(scn).summary() for name, scn in runs.items()}

header = f"{'run':28s} {'contained':>9s} {'max tau':>8s} {'max |fxy|/fz':>12s} {'mean ratio':>10s} {'max hip-foot':>12s}"
print(header)
print("-" * len(header))
for name, s in results.items():
    print(f"{name:28s} {s['containment_fraction']:9.0%} {s['max_torque_proxy']:8.2f} "
          f"{s['max_force_ratio']:12.3f} {s['mean_force_ratio']:10.4f} {s['max_hip_foot_xy']:12.4f}")

s40 = results["default (tau 40, mu 1.0)"]
s20 = results["torque halved (tau 20)"]
s014 = results["low friction (mu 0.14)"]
print(f"\ntighter torque pulls feet in: {s20['max_hip_foot_xy']:.4f} < {s40['max_hip_foot_xy']:.4f} m")
print(f"slick ground pushes forces upright: mean ratio {s014['mean_force_ratio']:.4f} "
      f"< {s40['mean_force_ratio']:.4f}, never above {s014['max_force_ratio']:.3f}")
