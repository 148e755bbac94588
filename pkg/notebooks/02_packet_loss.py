# %% [markdown]
# # Lost packets
#
# Every sample travels in its own packet.  On a loss the decoder guesses the
# sample as the belief-weighted mean of the state means and moves the belief
# one step through the transition matrix.  The encoder cannot see the loss,
# so it updates with the expected belief instead.

# %%
import numpy as np

from hmsq import HmmModel, sample
from hmsq import baselines as bl
from hmsq import loss as ls
from hmsq import tracking as tr

model = HmmModel.two_state(0.1)
_, train = sample(model, 50_000, 0)
_, x = sample(model, 100_000, 1)
R = 4
dp = bl.dpcm_train(train, R)
didx = bl.dpcm_encode(x, dp)[0]

# %%
print(" loss  tracking    dpcm")
for p in (0.0, 0.01, 0.05, 0.1):
    system = ls.train_lossy_system(model, R, p, em_rounds=3, seed=0, obs=train)
    stream = ls.simulate_loss(ls.encode_lossy(x, system), ls.LossChannel(p, seed=2))
    rec = ls.decode_lossy(stream, system)
    mask = stream.received_mask()
    d_dp = tr.mse_db(x, bl.dpcm_decode(didx, dp, mask))
    print(f"{100 * p:4.0f}% {tr.mse_db(x, rec):9.2f} {d_dp:7.2f}")

# %% [markdown]
# Concealment compared with two naive fills on the lost samples only.

# %%
lost = np.flatnonzero(~mask)
lost = lost[lost > 0]
print("belief mean ", round(float(np.mean((x[lost] - rec[lost]) ** 2)), 3))
print("zero        ", round(float(np.mean(x[lost] ** 2)), 3))
print("repeat last ", round(float(np.mean((x[lost] - rec[lost - 1]) ** 2)), 3))
