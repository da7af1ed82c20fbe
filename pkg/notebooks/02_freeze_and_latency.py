"""
Freeze time, state size and added latency
=========================================

How long the operator is frozen depends on how much state has to cross the
network while it is paused. Moving the bulk of the state beforehand
(partial movement) keeps the freeze short, and window recreation avoids it
entirely at the price of duplicated input.
"""

# %%
import numpy as np

from migrasim.algorithms import run_migration
from migrasim.presets import SINGLE_TRACK_MOVING, freeze_trend_doc, random_doc

# %%
# Sweep static state size with 10% extra state arriving during the move.
sizes = np.array([50e6, 100e6, 200e6, 400e6])
rows = []
for size in sizes:
    f = [run_migration(freeze_trend_doc(v, static_bytes=size, dynamic_bytes=size / 10))[0]
         .freeze_time for v in ("SingleTrackAllAtOnce", "SingleTrackPartial")]
    rows.append(f)
rows = np.array(rows)
print("static MB   all-at-once s   partial s   ratio")
for size, (aao, part) in zip(sizes, rows):
    print(f"{size / 1e6:9.0f}   {aao:13.3f}   {part:9.3f}   {part / aao:5.3f}")

# %%
# With steady arrivals, inputs that show up during the freeze wait until
# the new host starts, so on average they wait about half the freeze.
rng = np.random.default_rng(1)
print("variant                        freeze ms   mean added ms   ratio")
for i in range(9):
    v = SINGLE_TRACK_MOVING[i % 3]
    rec, _ = run_migration(random_doc(rng, v))
    print(f"{v:30s} {rec.freeze_time * 1e3:9.2f}   {rec.latency_mean * 1e3:13.2f}   "
          f"{rec.latency_mean / (rec.freeze_time / 2):5.3f}")
