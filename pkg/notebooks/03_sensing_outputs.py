# %% [markdown]
# # From channels to sensing outputs
#
# Breathing rate, multi-view fusion and a tracked walker, each from the
# simulated channel.

# %%
import numpy as np

from mmisac.fusion import raw_fix, run_ekf
from mmisac.sim import ScenarioConfig, diversity_areas, respiration_scene, run_baselines, tracking_scenario

# %% [markdown]
# ## Respiration under the four schedulers
# The person breathes at 15 bpm next to a UE.  Only sensing (SO) loses the
# most throughput; only communicating (CO) senses incidentally.

# %%
out = run_baselines(ScenarioConfig(respiration_scene(), seed=1))
for name, m in out.items():
    rate = "-" if m.rate_bpm is None else f"{m.rate_bpm:.1f}"
    print(f"{name:6s} {m.mean_throughput / 1e9:5.2f} Gbps  S-SNR {m.mean_s_snr_db:5.1f} dB  rate {rate} bpm")

# %% [markdown]
# ## Extra views shrink the location blob
# One monostatic view gives range and bearing; every UE that hears the
# echo adds a bearing from a different angle.

# %%
for n, a in enumerate(diversity_areas()):
    print(f"AP + {n} UE view(s): half-max area {a * 1e4:.0f} cm^2")

# %% [markdown]
# ## Tracking a walker
# Raw range/bearing fixes jitter by several cm; the constant-velocity EKF
# smooths them.

# %%
times, batches, sensors, truth = tracking_scenario(1)
raw = np.array([raw_fix(b[0], sensors["ap"][:2]) for b in batches])
est = np.array([s.position for s in run_ekf(times, batches, sensors, np.r_[raw[0], 0, 0],
                                            np.diag([0.1, 0.1, 1.0, 1.0]))])
for label, xy in (("raw", raw), ("EKF", est)):
    rmse = np.sqrt(np.mean(np.sum((xy - truth[:, :2]) ** 2, axis=1)))
    print(f"{label} RMSE {100 * rmse:.1f} cm")
