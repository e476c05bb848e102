"""A short tuned PMMH run on synthetic data.

The full study uses ``nmsmc infer --scenario base``; this script keeps the
budget small (a few minutes) and prints the posterior summary.
"""

# %%
import logging

import numpy as np

from nmsmc import FilterConfig, PmmhConfig, summarize, table_prior, tune_and_run
from nmsmc.pmmh import battery_builder
from nmsmc.scenarios import BUILTIN_SCENARIOS, make_dataset

logging.basicConfig(level=logging.INFO, format="%(message)s")

scenario = BUILTIN_SCENARIOS["base"]
data = make_dataset(scenario, seed=1)
prior = table_prior("uniform")
builder = battery_builder(scenario.ts, scenario.T, scenario.sigma_x, scenario.sigma_y)

# %% [markdown]
# The pilot walks with steps matched to the prior spread; its second half
# supplies the covariance of the main run.

# %%
cfg = PmmhConfig(iterations=500, proposal_cov=np.eye(6), filter_cfg=FilterConfig(64), seed=4)
chain = tune_and_run(prior, builder, data, cfg, pilot_iterations=1000)
meta = chain.tuning_meta
print(f"acceptance: pilot {meta['stage1']['acceptance_rate']:.3f}, main {meta['stage2']['acceptance_rate']:.3f}")

# %%
summary = summarize(chain, burn_in=0.25, prior=prior)
for name in summary.names:
    row = summary[name]
    print(f"{name:>7s} mean {row['mean']:10.4g}  90% [{row['q05']:.4g}, {row['q95']:.4g}]"
          f"  overlap with prior {row['overlap']:.2f}")
