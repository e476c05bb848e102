"""
Posterior summaries: Gaussian KDE, moments, quantiles, correlations and a
prior/posterior overlap score.

An overlap near 1 means the posterior marginal is indistinguishable from the
prior (nothing learned); near 0 means the data pinned the parameter down.
"""

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .pmmh import Chain, Prior

__all__ = [
    "silverman_bandwidth", "kde", "PosteriorSummary", "pool_chains",
    "summarize", "prior_posterior_overlap", "kde_curve",
]

_INV_SQRT_2PI = 1.0 / np.sqrt(2 * np.pi)


def silverman_bandwidth(samples) -> float:
    """``1.06 * sd * n^(-1/5)``; falls back to a tiny positive width for constant samples."""
    samples = np.asarray(samples, dtype=float)
    bw = 1.06 * np.std(samples, ddof=1) * samples.size ** (-0.2)
    if bw > 0:
        return float(bw)
    return 1e-6 * max(1.0, float(np.abs(samples).max()))


def kde(samples, grid, bandwidth: Optional[float] = None) -> np.ndarray:
    """Gaussian kernel density estimate evaluated on ``grid``."""
    samples = np.asarray(samples, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float)
    if bandwidth is None:
        if samples.size < 2:
            raise ValueError("need at least two samples to choose a bandwidth")
        bandwidth = silverman_bandwidth(samples)
    elif samples.size < 1:
        raise ValueError("no samples")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if grid.ndim != 1 or np.any(np.diff(grid) < 0):
        raise ValueError("grid must be a sorted 1-d array")
    out = np.zeros(grid.size)
    # chunk to bound the (grid x samples) temporary
    step = max(1, 2 ** 22 // max(samples.size, 1))
    for start in range(0, grid.size, step):
        z = (grid[start:start + step, None] - samples[None, :]) / bandwidth
        out[start:start + step] = np.exp(-0.5 * z * z).sum(axis=1)
    return out * _INV_SQRT_2PI / (samples.size * bandwidth)


@dataclass
class PosteriorSummary:
    names: Sequence[str]
    mean: np.ndarray
    sd: np.ndarray
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray
    correlation: np.ndarray
    degenerate: np.ndarray
    n_samples: int
    overlap: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def __getitem__(self, name):
        i = list(self.names).index(name)
        out = {"mean": self.mean[i], "sd": self.sd[i], "q05": self.q05[i],
               "q50": self.q50[i], "q95": self.q95[i]}
        if self.overlap is not None:
            out["overlap"] = self.overlap[i]
        return {k: float(v) for k, v in out.items()}

    def to_dict(self) -> dict:
        return {
            "parameters": {name: self[name] for name in self.names},
            "correlation": {
                "names": list(self.names),
                "matrix": self.correlation.tolist(),
            },
            "degenerate": [n for n, d in zip(self.names, self.degenerate) if d],
            "n_samples": self.n_samples,
            **self.extra,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _after_burn_in(samples, burn_in: float):
    if not 0 <= burn_in < 1:
        raise ValueError("burn_in must lie in [0, 1)")
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    return samples[int(np.floor(burn_in * len(samples))):]


def pool_chains(chains, burn_in: float = 0.25) -> np.ndarray:
    """Stack post-burn-in samples of several chains."""
    parts = [_after_burn_in(c.samples if isinstance(c, Chain) else c, burn_in) for c in chains]
    return np.vstack(parts)


def summarize(chain, burn_in: float = 0.25, prior: Optional[Prior] = None,
              names: Optional[Sequence[str]] = None, grid_size: int = 2048) -> PosteriorSummary:
    """Moments, 5/50/95% quantiles and Pearson correlations after burn-in.

    ``chain`` may be a :class:`Chain`, a sample array, or a list of either
    (pooled after per-chain burn-in).  Parameters with zero spread get zero
    off-diagonal correlations and are flagged as degenerate.  When ``prior`` is
    given the per-parameter overlap is included.
    """
    if isinstance(chain, (list, tuple)):
        samples = pool_chains(chain, burn_in)
        first = chain[0]
    else:
        samples = _after_burn_in(chain.samples if isinstance(chain, Chain) else chain, burn_in)
        first = chain
    if len(samples) == 0:
        raise ValueError("no samples left after burn-in")
    if names is None:
        names = tuple(first.names) if isinstance(first, Chain) else tuple(
            f"theta{i}" for i in range(samples.shape[1]))
    mean = samples.mean(axis=0)
    sd = samples.std(axis=0, ddof=1) if len(samples) > 1 else np.zeros(samples.shape[1])
    q05, q50, q95 = np.quantile(samples, [0.05, 0.5, 0.95], axis=0)
    degenerate = ~(sd > 0)
    d = samples.shape[1]
    corr = np.eye(d)
    ok = np.flatnonzero(~degenerate)
    if ok.size > 1:
        corr[np.ix_(ok, ok)] = np.corrcoef(samples[:, ok], rowvar=False)
    corr = np.clip((corr + corr.T) / 2, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    overlap = None
    if prior is not None:
        overlap = np.array([prior_posterior_overlap(prior, i, samples[:, i], grid_size)
                            for i in range(d)])
    return PosteriorSummary(names=tuple(names), mean=mean, sd=sd, q05=q05, q50=q50, q95=q95,
                            correlation=corr, degenerate=degenerate, n_samples=len(samples),
                            overlap=overlap)


def _support_grid(lo, hi, bandwidth, grid_size):
    # keep several grid points per kernel width so narrow posteriors integrate correctly
    n = int(min(2 ** 18, max(grid_size, np.ceil(8 * (hi - lo) / bandwidth) + 1)))
    return np.linspace(lo, hi, n)


def prior_posterior_overlap(prior: Prior, index: int, samples, grid_size: int = 2048,
                            bandwidth: Optional[float] = None) -> float:
    """Overlap coefficient ``1 - 0.5 * int |posterior - prior|``.

    Evaluated as ``int min(posterior, prior)`` over the prior support, which is
    the same quantity because the prior vanishes outside it; posterior mass
    leaking past the box therefore counts as disagreement.
    """
    if prior.kind not in ("uniform", "truncated_gaussian"):
        raise ValueError(f"unsupported prior kind {prior.kind!r}")
    samples = np.asarray(samples, dtype=float).ravel()
    bw = silverman_bandwidth(samples) if bandwidth is None else bandwidth
    grid = _support_grid(prior.lo[index], prior.hi[index], bw, grid_size)
    post = kde(samples, grid, bw)
    dens = prior.marginal_density(index, grid)
    value = np.trapezoid(np.minimum(post, dens), grid)
    return float(np.clip(value, 0.0, 1.0))


def kde_curve(samples, lo: Optional[float] = None, hi: Optional[float] = None,
              grid_size: int = 512, bandwidth: Optional[float] = None):
    """``(x, density)`` arrays for plotting; the grid defaults to the sample range padded by 3 bandwidths."""
    samples = np.asarray(samples, dtype=float).ravel()
    bw = silverman_bandwidth(samples) if bandwidth is None else bandwidth
    lo = samples.min() - 3 * bw if lo is None else lo
    hi = samples.max() + 3 * bw if hi is None else hi
    x = np.linspace(lo, hi, grid_size)
    return x, kde(samples, x, bw)
