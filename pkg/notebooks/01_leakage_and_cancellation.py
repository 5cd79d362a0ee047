# %% [markdown]
# # Leakage and how to get rid of it
#
# A 16-element AP transmits a sensing beam while listening on a co-located
# receive array.  The direct coupling between the two arrays sits about
# 50 dB above the echo of a small hand 1 m away.  This walk-through shows
# the raw picture, then the two cancellation stages.

# %%
import math

import numpy as np

from mmisac.array import PhasedArray, array_gain
from mmisac.cancellation import NullingProblem, beam_null, sensing_beamformers
from mmisac.channel import OfdmConfig, TxInterference, sector_interference_profile
from mmisac.sim import gesture_recovery

arr = PhasedArray(16)
cfg = OfdmConfig()

# %% [markdown]
# ## Leakage per sector
# The coupling is strongest when the Tx beam points straight ahead.

# %%
proc = TxInterference(cfg, arr, arr, seed=0, margin_db=50)
prof = sector_interference_profile(proc)  # dB
for i in range(0, 32, 4):
    print(f"sector {i:2d}: {prof[i] - prof.max():6.1f} dB re peak")

# %% [markdown]
# ## Analog nulling
# Steer both beams to 10 deg, require at most 3 dB main-lobe loss, and let
# the optimizer drive the leakage down.  Weights stay on the 4-bit grid.

# %%
b = math.radians(10)
bf = sensing_beamformers(arr, arr, b)
v = bf.tx_matrix()[:, 0]
h_ti = proc.for_awv(v, 0)
res = beam_null(NullingProblem(h_ti, bf, arr, arr, [(b, 10 * math.log10(16) - 3)], max_iters=300))
print(f"suppression {res.suppression_db:.1f} dB after {res.iterations} iterations")
print(f"rx gain at target {10 * math.log10(array_gain(res.bf.w_ab_rx[:, 0], arr, b)):.1f} dB")

# %% [markdown]
# ## The full pipeline on a gesture
# Without cancellation a 3-bit ADC drowns the hand in quantization noise
# and detection finds nothing.  After nulling and digital cancellation the
# moving tap stands well clear of the floor.

# %%
r = gesture_recovery(0, n_packets=100)
print(f"before: S-SNR {r.s_snr_before:5.1f} dB, detections {r.detected_before}")
print(f"after : S-SNR {r.s_snr_after:5.1f} dB, detections {r.detected_after}")
print(f"total suppression {r.report.total_suppression:.1f} dB")
