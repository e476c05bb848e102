"""Pick the particle count from repeated likelihood estimates.

At a few parameter values drawn from the prior the filter is rerun many
times; feeding the estimates through a mock accept/reject step tells how
often PMMH would move if the parameter never changed.
"""

# %%
from nmsmc import select_num_particles, table_prior
from nmsmc.pmmh import battery_builder
from nmsmc.scenarios import BUILTIN_SCENARIOS, make_dataset

scenario = BUILTIN_SCENARIOS["base"]
data = make_dataset(scenario, seed=1)
builder = battery_builder(scenario.ts, scenario.T, scenario.sigma_x, scenario.sigma_y)

# %%
chosen, report = select_num_particles(table_prior(), builder, data, n_reps=30,
                                      candidate_Ns=(16, 64, 128), threshold=0.1, seed=0)
for N, row in report["candidates"].items():
    print(f"N = {N:4d}: conditional acceptance {row['mean']:.3f} "
          f"(per theta {', '.join(f'{r:.2f}' for r in row['rates'])})")
print("smallest N reaching 10%:", chosen)
