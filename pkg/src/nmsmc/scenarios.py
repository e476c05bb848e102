"""
Identifiability experiments on synthetic battery data.

A :class:`Scenario` fixes the data-generating setup (length, input magnitude,
noise levels), the prior and the sampler budget.  :func:`run_scenario`
simulates the data, runs several independently seeded tuned PMMH chains and
writes chains, KDE curves and a pooled summary to a directory.
"""

import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import kde_curve, summarize
from .fom import PARAM_NAMES, THETA_STAR, BatteryTheta, Dataset, build_model, gen_prbs, simulate
from .pmmh import Chain, PmmhConfig, battery_builder, table_prior, tune_and_run
from .smc import FilterConfig

__all__ = [
    "Scenario", "ScenarioError", "BUILTIN_SCENARIOS", "list_scenarios", "get_scenario",
    "load_scenario", "make_dataset", "run_chain", "run_scenario",
]

logger = logging.getLogger(__name__)

SEED_ENV = "NMSMC_SEED"
DESK_ITERATIONS, DESK_CHAINS = 2000, 3
PAPER_ITERATIONS, PAPER_CHAINS = 20000, 5


class ScenarioError(ValueError):
    """Invalid scenario definition; the message names the offending field."""


@dataclass
class Scenario:
    name: str
    T: int = 930
    input_magnitude: float = 1.0
    prior_kind: str = "uniform"
    sigma_x: float = 0.002
    sigma_y: float = 0.02
    ts: float = 5e-4
    theta_true: tuple = tuple(THETA_STAR.to_array())
    n_particles: int = 128
    iterations: int = DESK_ITERATIONS
    n_chains: int = DESK_CHAINS
    seed: int = 1
    pilot_iterations: int = 5000
    proposal: str = "locally_optimal"
    description: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        def bad(name, why):
            raise ScenarioError(f"invalid scenario field {name!r}: {why}")

        if int(self.T) != self.T or self.T < 2:
            bad("T", "must be an integer >= 2")
        if int(self.n_chains) != self.n_chains or self.n_chains < 1:
            bad("n_chains", "must be an integer >= 1")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            bad("iterations", "must be an integer >= 1")
        if int(self.pilot_iterations) != self.pilot_iterations or self.pilot_iterations < 2:
            bad("pilot_iterations", "must be an integer >= 2")
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            bad("n_particles", "must be an integer >= 1")
        if not self.input_magnitude > 0:
            bad("input_magnitude", "must be positive")
        if self.prior_kind not in ("uniform", "truncated_gaussian"):
            bad("prior_kind", "must be 'uniform' or 'truncated_gaussian'")
        if self.proposal not in ("bootstrap", "locally_optimal"):
            bad("proposal", "must be 'bootstrap' or 'locally_optimal'")
        if not self.sigma_x >= 0:
            bad("sigma_x", "must be non-negative")
        if not self.sigma_y > 0:
            bad("sigma_y", "must be positive")
        if not self.ts > 0:
            bad("ts", "must be positive")
        try:
            BatteryTheta.from_array(self.theta_true)
        except (TypeError, ValueError) as exc:
            bad("theta_true", str(exc))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["theta_true"] = [float(v) for v in self.theta_true]
        return out

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


_DESCRIPTIONS = {
    "base": "T = 930, PRBS of magnitude 1, uniform prior, sigma_y = 0.02",
    "tlen_635": "base setup with a shorter record, T = 635",
    "tlen_1890": "base setup with a longer record, T = 1890",
    "mag5": "base setup with a PRBS input of magnitude 5",
    "prior_gauss": "base setup with Gaussian priors (range midpoint, sd = range/4) truncated to the box",
    "snr_high": "base setup with lower output noise, sigma_y = 0.002",
}

BUILTIN_SCENARIOS = {
    "base": Scenario("base", description=_DESCRIPTIONS["base"]),
    "tlen_635": Scenario("tlen_635", T=635, description=_DESCRIPTIONS["tlen_635"]),
    "tlen_1890": Scenario("tlen_1890", T=1890, description=_DESCRIPTIONS["tlen_1890"]),
    "mag5": Scenario("mag5", input_magnitude=5.0, description=_DESCRIPTIONS["mag5"]),
    "prior_gauss": Scenario("prior_gauss", prior_kind="truncated_gaussian",
                            description=_DESCRIPTIONS["prior_gauss"]),
    "snr_high": Scenario("snr_high", sigma_y=0.002, description=_DESCRIPTIONS["snr_high"]),
}


def list_scenarios() -> dict:
    """Builtin scenario names mapped to one-line descriptions."""
    return {name: s.description for name, s in BUILTIN_SCENARIOS.items()}


def load_scenario(path) -> Scenario:
    """Read a flat JSON object whose keys are :class:`Scenario` fields."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must hold a JSON object")
    known = {f.name for f in dataclasses.fields(Scenario)}
    unknown = set(raw) - known
    if unknown:
        raise ScenarioError(f"invalid scenario field {sorted(unknown)[0]!r}: unknown field")
    base = BUILTIN_SCENARIOS.get(raw.get("name", ""), Scenario(raw.get("name", Path(path).stem)))
    fields = base.to_dict()
    fields.update(raw)
    if isinstance(fields["theta_true"], dict):
        fields["theta_true"] = [fields["theta_true"][n] for n in PARAM_NAMES]
    fields["theta_true"] = tuple(fields["theta_true"])
    return Scenario(**fields)


def get_scenario(name_or_path) -> Scenario:
    if name_or_path in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[name_or_path]
    path = Path(name_or_path)
    if path.suffix == ".json" or path.exists():
        return load_scenario(path)
    raise ScenarioError(f"invalid scenario field 'name': unknown scenario {name_or_path!r}")


def effective_seed(scenario: Scenario, seed: Optional[int] = None) -> int:
    """Explicit seed, else ``NMSMC_SEED``, else the scenario's own seed."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ScenarioError(f"invalid scenario field 'seed': {SEED_ENV}={env!r} is not an integer")
    return int(scenario.seed)


def make_dataset(scenario: Scenario, seed: Optional[int] = None) -> Dataset:
    seed = scenario.seed if seed is None else seed
    theta = BatteryTheta.from_array(scenario.theta_true)
    model = build_model(theta, scenario.ts, scenario.T, scenario.sigma_x, scenario.sigma_y)
    u = gen_prbs(scenario.T + 1, scenario.input_magnitude, scenario.ts, seed)
    return simulate(model, u, seed, theta=theta)


def run_chain(scenario: Scenario, data: Dataset, seed: int) -> Chain:
    prior = table_prior(scenario.prior_kind)
    builder = battery_builder(scenario.ts, data.horizon, scenario.sigma_x, scenario.sigma_y)
    cfg = PmmhConfig(
        iterations=scenario.iterations,
        proposal_cov=np.diag(prior.marginal_sd() ** 2),
        filter_cfg=FilterConfig(scenario.n_particles, scenario.proposal, "systematic"),
        seed=seed,
    )
    return tune_and_run(prior, builder, data, cfg, pilot_iterations=scenario.pilot_iterations)


def _run_chain_job(args):
    scenario, data, seed = args
    return run_chain(scenario, data, seed)


def write_kde_curves(chain: Chain, out_dir: Path, tag: str, burn_in: float = 0.25, prior=None):
    samples = chain.samples[int(burn_in * len(chain)):]
    paths = []
    for i, name in enumerate(chain.names):
        lo = hi = None
        if prior is not None:
            lo, hi = prior.lo[i], prior.hi[i]
        x, dens = kde_curve(samples[:, i], lo, hi)
        path = out_dir / f"kde_{name}_{tag}.csv"
        with open(path, "w") as fh:
            fh.write("x,density\n")
            for xi, di in zip(x, dens):
                fh.write(f"{float(xi)!r},{float(di)!r}\n")
        paths.append(path)
    return paths


def run_scenario(scenario: Scenario, out_dir, seed: Optional[int] = None, jobs: int = 1,
                 data: Optional[Dataset] = None, burn_in: float = 0.25) -> dict:
    """Simulate data, run ``n_chains`` tuned PMMH chains and write all artifacts.

    Chain ``c`` uses seed ``seed + c``.  Returns a dict of written paths and
    the pooled summary.
    """
    seed = effective_seed(scenario, seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if data is None:
        data = make_dataset(scenario, seed)
    data_path = out_dir / "dataset.csv"
    data.to_csv(data_path)

    jobs_args = [(scenario, data, seed + c) for c in range(scenario.n_chains)]
    if jobs > 1 and scenario.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, scenario.n_chains)) as pool:
            chains = list(pool.map(_run_chain_job, jobs_args))
    else:
        chains = [_run_chain_job(a) for a in jobs_args]

    prior = table_prior(scenario.prior_kind)
    written = {"dataset": data_path, "chains": [], "kde": []}
    for c, chain in enumerate(chains):
        path = out_dir / f"chain_{c}.csv"
        chain.to_csv(path)
        written["chains"].append(path)
        written["kde"].extend(write_kde_curves(chain, out_dir, f"chain{c}", burn_in, prior))

    summary = summarize(chains, burn_in=burn_in, prior=prior)
    summary.extra = {
        "scenario": scenario.to_dict(),
        "seed": seed,
        "burn_in": burn_in,
        "acceptance": [
            {"stage1": ch.tuning_meta["stage1"]["acceptance_rate"],
             "stage2": ch.tuning_meta["stage2"]["acceptance_rate"]} for ch in chains
        ],
    }
    summary_path = out_dir / "summary.json"
    summary.to_json(summary_path)
    written["summary"] = summary_path
    written["summary_data"] = summary
    written["chain_objects"] = chains
    return written
