"""
Particle marginal Metropolis-Hastings.

A Gaussian random-walk Metropolis-Hastings sampler in which the likelihood
is replaced by a particle-filter estimate.  The estimate attached to the
current state is stored with it and reused until the next acceptance, so the
chain targets the exact posterior.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .fom import PARAM_NAMES, BatteryTheta, Dataset, FoModel, build_model
from .smc import FilterConfig, run_filter

__all__ = [
    "Prior", "table_prior", "prior_logdensity", "PmmhConfig", "Chain",
    "pmmh_run", "tune_and_run", "conditional_acceptance_rate",
    "select_num_particles", "battery_builder", "filter_loglik",
]

logger = logging.getLogger(__name__)

# bounds of the uniform prior box, one row per parameter
TABLE_BOUNDS = {
    "R_inf": (0.005, 0.10),
    "R1": (0.050, 0.50),
    "C1": (1.0, 5.0),
    "C2": (300.0, 500.0),
    "alpha1": (0.40, 1.00),
    "alpha2": (0.40, 1.00),
}

JITTER = 1e-10


@dataclass
class Prior:
    """Independent prior on a box: uniform, or Gaussian truncated to the box."""

    lo: np.ndarray
    hi: np.ndarray
    kind: str = "uniform"
    mean: Optional[np.ndarray] = None
    sd: Optional[np.ndarray] = None
    names: Sequence[str] = ()

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.lo >= self.hi):
            raise ValueError("prior bounds need lo < hi componentwise")
        if self.kind not in ("uniform", "truncated_gaussian"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "truncated_gaussian":
            if self.mean is None:
                self.mean = (self.lo + self.hi) / 2
            if self.sd is None:
                self.sd = (self.hi - self.lo) / 4
            self.mean = np.asarray(self.mean, dtype=float)
            self.sd = np.asarray(self.sd, dtype=float)
        if not self.names:
            self.names = tuple(f"theta{i}" for i in range(self.dim))

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def in_support(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all((theta >= self.lo) & (theta <= self.hi)))

    def logdensity(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if not self.in_support(theta):
            return -np.inf
        if self.kind == "uniform":
            return float(-np.sum(np.log(self.width)))
        # unnormalized: the truncation constant cancels in acceptance ratios
        z = (theta - self.mean) / self.sd
        return float(-0.5 * np.sum(z ** 2))

    def sample(self, rng) -> np.ndarray:
        if self.kind == "uniform":
            return self.lo + self.width * rng.random(self.dim)
        out = np.empty(self.dim)
        for i in range(self.dim):
            while True:
                v = self.mean[i] + self.sd[i] * rng.standard_normal()
                if self.lo[i] <= v <= self.hi[i]:
                    out[i] = v
                    break
        return out

    def marginal_sd(self) -> np.ndarray:
        """Scale used for the pilot random walk.

        The uniform standard deviation ``width / sqrt(12)``, or the Gaussian
        ``sd`` parameter before truncation.
        """
        if self.kind == "uniform":
            return self.width / np.sqrt(12.0)
        return self.sd.copy()

    def marginal_density(self, i: int, x) -> np.ndarray:
        """Normalized marginal density of component ``i`` on a grid ``x``."""
        from scipy.stats import truncnorm

        x = np.asarray(x, dtype=float)
        lo, hi = self.lo[i], self.hi[i]
        inside = (x >= lo) & (x <= hi)
        if self.kind == "uniform":
            return np.where(inside, 1.0 / (hi - lo), 0.0)
        a, b = (lo - self.mean[i]) / self.sd[i], (hi - self.mean[i]) / self.sd[i]
        return np.where(inside, truncnorm.pdf(x, a, b, loc=self.mean[i], scale=self.sd[i]), 0.0)


def table_prior(kind: str = "uniform") -> Prior:
    """Prior over the six battery parameters on the standard ranges."""
    lo, hi = np.array([TABLE_BOUNDS[n] for n in PARAM_NAMES]).T
    return Prior(lo=lo, hi=hi, kind=kind, names=PARAM_NAMES)


def prior_logdensity(prior: Prior, theta) -> float:
    return prior.logdensity(theta)


def battery_builder(ts: float, horizon: int, sigma_x: float, sigma_y: float):
    """Map a parameter vector to the discretized battery model."""
    def builder(theta) -> FoModel:
        return build_model(BatteryTheta.from_array(theta), ts, horizon, sigma_x, sigma_y)
    return builder


def filter_loglik(model_builder, data: Dataset, filter_cfg: FilterConfig):
    """Particle-filter log-likelihood estimator ``(theta, seed) -> float``."""
    def loglik(theta, seed) -> float:
        return run_filter(model_builder(theta), data, replace(filter_cfg, seed=seed)).log_likelihood
    return loglik


@dataclass
class PmmhConfig:
    iterations: int
    proposal_cov: np.ndarray
    filter_cfg: FilterConfig = field(default_factory=FilterConfig)
    seed: int = 0
    init: Optional[np.ndarray] = None
    init_loglik: Optional[float] = None

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise ValueError("iterations must be >= 1")
        cov = np.atleast_2d(np.asarray(self.proposal_cov, dtype=float))
        if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
            raise ValueError("proposal covariance must be a symmetric matrix")
        if np.linalg.eigvalsh(cov).min() < -1e-12 * max(1.0, np.abs(cov).max()):
            raise ValueError("proposal covariance must be positive semidefinite")
        self.proposal_cov = cov


@dataclass
class Chain:
    samples: np.ndarray
    loglik: np.ndarray
    accepted: np.ndarray
    names: Sequence[str]
    theta0: np.ndarray
    loglik0: float
    tuning_meta: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if len(self.accepted) else 0.0

    def __len__(self):
        return len(self.samples)

    def to_csv(self, path) -> None:
        """Write ``iter,<params>,loglik,accepted`` rows and a JSON metadata sidecar."""
        path = Path(path)
        with open(path, "w") as fh:
            fh.write(",".join(["iter", *self.names, "loglik", "accepted"]) + "\n")
            for t, (theta, ll, acc) in enumerate(zip(self.samples, self.loglik, self.accepted), 1):
                row = [str(t), *(repr(float(v)) for v in theta), repr(float(ll)), str(int(acc))]
                fh.write(",".join(row) + "\n")
        meta = {
            "acceptance_rate": self.acceptance_rate,
            "theta0": self.theta0.tolist(),
            "loglik0": self.loglik0,
            "tuning_meta": self.tuning_meta,
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=_jsonable))

    @classmethod
    def from_csv(cls, path) -> "Chain":
        path = Path(path)
        header = path.read_text().splitlines()[0].strip().split(",")
        if header[0] != "iter" or header[-2:] != ["loglik", "accepted"]:
            raise ValueError(f"unexpected chain header {header}")
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = {}
        if path.with_suffix(".json").exists():
            meta = json.loads(path.with_suffix(".json").read_text())
        names = tuple(header[1:-2])
        return cls(samples=table[:, 1:-2], loglik=table[:, -2], accepted=table[:, -1].astype(bool),
                   names=names,
                   theta0=np.asarray(meta.get("theta0", table[0, 1:-2]), dtype=float),
                   loglik0=float(meta.get("loglik0", np.nan)),
                   tuning_meta=meta.get("tuning_meta", {}))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")


def _sqrt_psd(cov):
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def pmmh_run(prior: Prior, model_builder: Callable, data: Dataset, cfg: PmmhConfig,
             log_likelihood: Optional[Callable] = None) -> Chain:
    """Run PMMH for ``cfg.iterations`` iterations.

    ``log_likelihood(theta, seed)`` replaces the particle filter when given;
    plugging in an exact likelihood turns the sampler into plain
    Metropolis-Hastings.  Candidates outside the prior support are rejected
    before any likelihood evaluation.
    """
    if log_likelihood is None:
        log_likelihood = filter_loglik(model_builder, data, cfg.filter_cfg)
    d = prior.dim
    if cfg.proposal_cov.shape != (d, d):
        raise ValueError(f"proposal covariance must be {d}x{d}")
    rng = np.random.default_rng(cfg.seed)
    root = _sqrt_psd(cfg.proposal_cov)

    def seed():
        return int(rng.integers(2 ** 63))

    theta = prior.sample(rng) if cfg.init is None else np.asarray(cfg.init, dtype=float).copy()
    log_prior = prior.logdensity(theta)
    if not np.isfinite(log_prior):
        raise ValueError("initial parameter lies outside the prior support")
    loglik = float(cfg.init_loglik) if cfg.init_loglik is not None else log_likelihood(theta, seed())
    theta0, loglik0 = theta.copy(), loglik

    M = int(cfg.iterations)
    samples = np.empty((M, d))
    logliks = np.empty(M)
    accepted = np.zeros(M, dtype=bool)
    for t in range(M):
        candidate = theta + root @ rng.standard_normal(d)
        log_u = np.log(rng.random())
        cand_prior = prior.logdensity(candidate)
        if np.isfinite(cand_prior):
            cand_ll = log_likelihood(candidate, seed())
            # symmetric random walk: proposal densities cancel
            log_alpha = (cand_prior + cand_ll) - (log_prior + loglik)
            if log_u < log_alpha:
                theta, log_prior, loglik = candidate, cand_prior, cand_ll
                accepted[t] = True
        samples[t] = theta
        logliks[t] = loglik
        if (t + 1) % 500 == 0:
            logger.info("pmmh %d/%d acceptance %.3f", t + 1, M, accepted[:t + 1].mean())
    return Chain(samples=samples, loglik=logliks, accepted=accepted, names=tuple(prior.names),
                 theta0=theta0, loglik0=loglik0)


def tune_and_run(prior: Prior, model_builder: Callable, data: Dataset, cfg: PmmhConfig,
                 pilot_iterations: int = 5000, pilot_discard: Optional[int] = None,
                 log_likelihood: Optional[Callable] = None) -> Chain:
    """Pilot run with a prior-scaled diagonal walk, then the main run.

    The pilot uses standard deviations matched to the prior; its first half
    (``pilot_discard``) is dropped and the covariance of the rest, plus a
    small jitter, drives the main run, which starts from the pilot's final
    state and likelihood estimate.
    """
    if pilot_iterations < 2:
        raise ValueError("pilot_iterations must be >= 2")
    discard = pilot_iterations // 2 if pilot_discard is None else int(pilot_discard)
    if not 0 <= discard < pilot_iterations - 1:
        raise ValueError("pilot_discard must leave at least two pilot samples")
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    pilot_cov = np.diag(prior.marginal_sd() ** 2)
    pilot_cfg = replace(cfg, iterations=pilot_iterations, proposal_cov=pilot_cov, seed=int(seeds[0]))
    pilot = pmmh_run(prior, model_builder, data, pilot_cfg, log_likelihood)

    tail = pilot.samples[discard:]
    jitter = JITTER * np.diag(prior.width ** 2)
    sigma_hat = np.atleast_2d(np.cov(tail, rowvar=False)) + jitter

    main_cfg = replace(cfg, proposal_cov=sigma_hat, seed=int(seeds[1]),
                       init=pilot.samples[-1].copy(), init_loglik=float(pilot.loglik[-1]))
    chain = pmmh_run(prior, model_builder, data, main_cfg, log_likelihood)
    chain.tuning_meta = {
        "stage1": {
            "iterations": pilot_iterations,
            "discarded": discard,
            "acceptance_rate": pilot.acceptance_rate,
            "proposal_sd": prior.marginal_sd().tolist(),
            "theta0": pilot.theta0.tolist(),
        },
        "stage2": {
            "iterations": int(cfg.iterations),
            "acceptance_rate": chain.acceptance_rate,
            "proposal_cov": sigma_hat.tolist(),
        },
        "jitter": JITTER,
        "n_particles": int(cfg.filter_cfg.n_particles),
        "proposal": cfg.filter_cfg.proposal,
        "seed": int(cfg.seed),
    }
    return chain


def conditional_acceptance_rate(log_z, rng) -> float:
    """Mimic Metropolis-Hastings moves between repeated estimates at one theta.

    Starting from ``Z_1``, estimate ``Z_j`` is accepted with probability
    ``min(1, Z_j / Z_current)``; returns the fraction of accepted moves.
    """
    log_z = np.asarray(log_z, dtype=float)
    if log_z.size < 2:
        raise ValueError("need at least two estimates")
    current = log_z[0]
    hits = 0
    for lz in log_z[1:]:
        log_u = np.log(rng.random())
        if lz == current or log_u < lz - current:
            current = lz
            hits += 1
    return hits / (log_z.size - 1)


def select_num_particles(prior: Prior, model_builder: Callable, data: Dataset,
                         n_reps: int = 100, candidate_Ns: Sequence[int] = (16, 64, 128),
                         threshold: float = 0.1, n_theta: int = 3, seed: int = 0,
                         proposal: str = "locally_optimal", thetas=None):
    """Smallest particle count whose average conditional acceptance reaches ``threshold``.

    Returns ``(N, report)``; ``N`` is ``None`` when no candidate qualifies.
    """
    if not candidate_Ns:
        raise ValueError("candidate list is empty")
    if n_reps < 2:
        raise ValueError("n_reps must be >= 2")
    rng = np.random.default_rng(seed)
    if thetas is None:
        thetas = [prior.sample(rng) for _ in range(n_theta)]
    thetas = [np.asarray(t, dtype=float) for t in thetas]
    models = [model_builder(t) for t in thetas]
    report = {"thetas": [t.tolist() for t in thetas], "threshold": threshold, "candidates": {}}
    chosen = None
    for N in sorted(int(n) for n in candidate_Ns):
        rates = []
        for model in models:
            log_z = [run_filter(model, data, FilterConfig(N, proposal, "systematic",
                                                          int(rng.integers(2 ** 63)))).log_likelihood
                     for _ in range(n_reps)]
            rates.append(conditional_acceptance_rate(log_z, rng))
        mean_rate = float(np.mean(rates))
        report["candidates"][N] = {"rates": rates, "mean": mean_rate}
        logger.info("N=%d conditional acceptance %.3f", N, mean_rate)
        if chosen is None and mean_rate >= threshold:
            chosen = N
    report["chosen"] = chosen
    return chosen, report
