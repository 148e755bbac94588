# %% [markdown]
# # Base and enhancement layers
#
# The base layer is the tracking codec.  The enhancement layer quantizes each
# sample again inside its base cell, with a quantizer designed for the state
# mixture truncated to that cell.  Its own belief is driven by the finer
# enhancement cells.  With a lookahead L the enhancement coder also uses the
# base cells up to L-1 samples ahead.

# %%
import numpy as np

from hmsq import HmmModel, sample
from hmsq import baselines as bl
from hmsq import scalable as sc
from hmsq import tracking as tr

model = HmmModel.two_state(0.01)
_, train = sample(model, 50_000, 0)
_, x = sample(model, 100_000, 1)
base = tr.train_system(model, 3, em_rounds=4, seed=0, obs=train)

# %%
print("R2  tracking  dpcm+lloyd  bound")
for r2 in (2, 3, 4):
    st = sc.encode_scalable(x, sc.ScalableSystem(base, r2))
    dp = bl.scalable_dpcm_train(train, 3, r2)
    d_dp = tr.mse_db(x, bl.scalable_dpcm_run(x, dp)[3])
    d_bd = 10 * np.log10(bl.bound_switched(model, 3 + r2, restarts=5))
    print(f"{r2:2d} {tr.mse_db(x, st.enh_reconstruction):9.2f} {d_dp:11.2f} {d_bd:6.2f}")

# %% [markdown]
# Lookahead.  The enhancement quantizer is designed to convergence here so
# that the comparison measures the extra information, not the design.

# %%
base4 = tr.train_system(model, 4, em_rounds=4, seed=0, obs=train)
for L in (0, 1, 2):
    st = sc.encode_scalable(x, sc.ScalableSystem(base4, 2, L, enh_online_lloyd_iters=1000, enh_lloyd_tol=1e-6))
    print(f"L={L}: {tr.mse_db(x, st.enh_reconstruction):.3f} dB")
