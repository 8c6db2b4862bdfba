"""Value and derivative profile of a 1D hash-encoding level.

The interpolated feature is piecewise linear, so its raw derivative is a
square-ish wave that flips sign at the grid lines.  The smoothed backward
pass rescales each cell's slope by 1 + lambda * (pi/2) * sin(pi w), which
fades the rescaling out exactly at the grid lines.
"""

import numpy as np

from hashfield.encoding import derivative_profile_1d, write_profile_csv

rng = np.random.default_rng(3)
resolution = 8
table = rng.uniform(0.0, 1.0, size=resolution + 1)

rows = []
for mode in ("raw", "smoothed"):
    rows.extend(derivative_profile_1d(table, resolution, 400, mode=mode,
                                      st_mix=1.0))
write_profile_csv(rows, "derivative_profile.csv")
print(f"wrote derivative_profile.csv ({len(rows)} rows)")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    raise SystemExit(0)

raw = [r for r in rows if r[3] == "raw"]
smooth = [r for r in rows if r[3] == "smoothed"]
fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
top.plot([r[0] for r in raw], [r[1] for r in raw], color="k")
top.set_ylabel("h(x)")
bottom.plot([r[0] for r in raw], [r[2] for r in raw], label="raw")
bottom.plot([r[0] for r in smooth], [r[2] for r in smooth],
            label="smoothed", alpha=0.8)
for k in range(resolution + 1):
    bottom.axvline(k / resolution, color="gray", lw=0.4)
bottom.set_xlabel("x")
bottom.set_ylabel("dh/dx")
bottom.legend()
fig.tight_layout()
fig.savefig("derivative_profile.png", dpi=120)
print("wrote derivative_profile.png")
