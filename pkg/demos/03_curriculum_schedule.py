"""Per-level learning-rate weights of the coarse-to-fine curriculum.

Each table level stays silent until the progress variable reaches its
index, then ramps in through half a cosine.  Coarse levels therefore shape
the scene first, which keeps early pose gradients smooth.
"""

import numpy as np

from hashfield.trainer import CurriculumSchedule, curriculum_weight

sched = CurriculumSchedule(n_levels=8, t_start=500, t_end=2500)
steps = np.linspace(0, 3000, 601)

for level in (1, 2, 4, 8):
    ramp_start = next((t for t in steps
                       if curriculum_weight(level, t, sched) > 0), None)
    full = next((t for t in steps
                 if curriculum_weight(level, t, sched) >= 1.0), None)
    print(f"level {level}: first nonzero at step {ramp_start}, "
          f"full rate at step {full}")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    raise SystemExit(0)

fig, ax = plt.subplots(figsize=(7, 3.5))
for level in range(1, 9):
    ax.plot(steps, [curriculum_weight(level, t, sched) for t in steps],
            label=f"level {level}")
ax.set_xlabel("step")
ax.set_ylabel("learning-rate weight")
ax.legend(ncol=4, fontsize=8)
fig.tight_layout()
fig.savefig("curriculum_schedule.png", dpi=120)
print("wrote curriculum_schedule.png")
