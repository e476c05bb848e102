"""Simulate the fractional-order battery model and look at its impedance.

Run with ``python demos/01_model_and_impedance.py``.
"""

# %%
import numpy as np

from nmsmc import THETA_STAR, build_model, gen_prbs, impedance, simulate
from nmsmc.fom import binom_frac

# %% [markdown]
# The discretized model keeps the whole past of the state: each component is
# weighted by a binomial coefficient that decays like a power of the lag, so
# no finite window reproduces the model exactly.

# %%
model = build_model(THETA_STAR, ts=5e-4, horizon=930, sigma_x=0.002, sigma_y=0.02)
for lag in (1, 10, 100, 900):
    print(f"lag {lag:4d}: R1||C1 branch {model.coeff[0, lag]:.2e}   Warburg {model.coeff[1, lag]:.2e}")
print("C(0.5, 2) =", binom_frac(0.5, 2))

# %% [markdown]
# A +-1 A pseudo-random binary current excites both time constants.

# %%
u = gen_prbs(931, magnitude=1.0, seed=1)
data = simulate(model, u, seed=1, theta=THETA_STAR)
print(f"{data.horizon + 1} samples, output range {data.y.min():.3f} .. {data.y.max():.3f} V")

# %% [markdown]
# At high frequency only the series resistance is left; at very low frequency
# the open-circuit Warburg branch takes over and the phase heads to -45 deg.

# %%
for f in (2e3, 10.0, 1e-2, 1e-4, 1e-10):
    z = impedance(THETA_STAR, 2 * np.pi * f)
    print(f"f = {f:8.0e} Hz   |Z| = {abs(z):.4f} ohm   phase = {np.degrees(np.angle(z)):6.1f} deg")
