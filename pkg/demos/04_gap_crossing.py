"""Closed-loop trot across a 0.30 m gap.

Runs the bundled receding-horizon scenario for 10 s of sim time, writes the
run artifacts (touchdowns, forces, solve stats), and prints the crossing
story: every touchdown, which patch it landed on, and the summary metrics.
"""

import json

from stepfield import io as sio
from stepfield.planner import run_closed_loop

scenario = sio.bundled_scenario("trot_gap30")
log = run_closed_loop(scenario)

for path in sio.write_log(log, "gap30_run"):
    print(f"wrote {path}")

print("\ntouchdown sequence:")
for e in log.touchdowns:
    print(f"  t={e.t:5.2f}s foot {e.foot} -> ({e.x:+.3f}, {e.y:+.3f}) on {e.patch_id}"
          f"  penalty {e.penalty:.4f}")

summary = log.summary()
print("\nsummary:")
print(json.dumps({k: (round(v, 4) if isinstance(v, float) else v)
                  for k, v in summary.items()}, indent=2, default=str))
