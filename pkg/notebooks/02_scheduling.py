# %% [markdown]
# # Sharing beams between users and subjects
#
# Each UE needs a communication beam and each subject needs to be swept for
# sensing.  Round-robin gives everyone their own slot.  Beam-compatible
# sets pack subjects into beams already pointed at UEs, or into wider beams
# that still reach them, and cut the number of slots roughly in half.

# %%
import numpy as np

from mmisac.scheduling import EmulationGrid, bcset_span, emulate_time_span, random_grid, round_robin

geo = EmulationGrid()
grid = random_grid(6, 14, np.random.default_rng(1), geo)
span, res = bcset_span(grid, 1, geo)
print(f"round-robin slots: {round_robin(grid, 1)}")
print(f"BC-Set slots     : {span}")
for s in sorted(res.sets, key=lambda s: s.slot):
    print(f"  slot {s.slot}: bins {s.beam.lo:2d}-{s.beam.hi:2d}  ues={s.ues}  subjects={s.subjects}")

# %% [markdown]
# ## Averages over random placements
# The integer program gives the optimum for comparison.

# %%
for chains in (1, 2):
    r = emulate_time_span(6, 14, 100, chains, rng_seed=0)
    print(f"{chains} chain(s): RR {r.rr:.2f}  BC-Set {r.bcset:.2f}  Opt {r.opt:.2f}  "
          f"ratio {r.bcset / r.rr:.2f}")
