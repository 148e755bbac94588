# %% [markdown]
# # Tracking the hidden state with the quantized past
#
# A two-state source with means -1.5 and +1.5, unit variance and switching
# probability a.  The codec keeps a belief over the state, computed from the
# quantization cells it has already sent, and redesigns its quantizer for the
# predicted mixture at every sample.  The decoder repeats the same steps from
# the indices alone.

# %%
import numpy as np

from hmsq import HmmModel, sample
from hmsq import baselines as bl
from hmsq import tracking as tr

model = HmmModel.two_state(0.1)
_, train = sample(model, 50_000, 0)
states, x = sample(model, 100_000, 1)
print("lag-1 correlation", round(bl.lag1_coefficient(x), 4))

# %% [markdown]
# Train a rate-3 system: five belief classes, each with its own codebook.

# %%
system = tr.train_system(model, 3, n_classes=5, em_rounds=4, seed=0, obs=train)
print(np.round(system.class_reps, 3))
enc = tr.run_encoder(x, system)
dec = tr.run_decoder(enc.indices, system)
print("decoder matches encoder:", np.array_equal(enc.reconstruction, dec.reconstruction))

# %% [markdown]
# The belief follows the hidden state closely even though it only sees
# 3-bit cells.

# %%
hit = np.mean((enc.beliefs[:, 1] > 0.5) == (states == 1))
print(f"state guessed from the belief: {100 * hit:.1f} % of samples")

# %% [markdown]
# Rate-distortion against DPCM, a finite-state quantizer, a single static
# Lloyd quantizer and the genie-aided switched bound.

# %%
print(" R  tracking    dpcm     fsq  static   bound")
for R in range(1, 5):
    s = tr.train_system(model, R, em_rounds=4, seed=0, obs=train)
    d_tr = tr.mse_db(x, tr.run_encoder(x, s).reconstruction)
    d_dp = tr.mse_db(x, bl.dpcm_encode(x, bl.dpcm_train(train, R))[1])
    d_fs = tr.mse_db(x, bl.fsq_encode(x, bl.fsq_train(train, 5, R))[1])
    d_st = 10 * np.log10(tr.static_distortion(model, R))
    d_bd = 10 * np.log10(bl.bound_switched(model, R, restarts=5))
    print(f"{R:2d} {d_tr:9.2f} {d_dp:7.2f} {d_fs:7.2f} {d_st:7.2f} {d_bd:7.2f}")
