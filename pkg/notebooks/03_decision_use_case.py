"""
Should the join move?
=====================

A host is only worth moving to if its better score outlasts the cost of
getting there. The cost is the share of predicted throughput lost while the
state moves, measured over an amortization window. That window shrinks when
the workload is unstable, since a volatile workload may undo the move soon.
"""

# %%
import json
from pathlib import Path

import numpy as np

from migrasim.decision import amortization_time, decision_table, rsd

ROOT = Path(__file__).resolve().parents[1]
doc = json.loads((ROOT / "scenarios" / "table5_decision.json").read_text())

# %%
# Benefit per host, and the choice with and without the cost model.
rows = decision_table(doc)
print(json.dumps(rows[0], indent=None))
for r in rows:
    print(f"PT={r['PT']:5}  " + "  ".join(f"{h}={r[f'B_m ({h})']:.3f}" for h in "CDE")
          + f"   with cost: {r['P (CM)']}   without: {r['P (NCM)']}")

# %%
# Amortization window as a function of workload volatility.
rng = np.random.default_rng(3)
for spread in (0.0, 0.1, 0.3, 0.6, 1.0):
    samples = 1000 * (1 + spread * rng.standard_normal(20))
    r = rsd(samples)
    print(f"spread {spread:3.1f}: rsd {r:6.1f}%  ->  at {amortization_time(r, 1.0, 10.0):5.2f} s")
