"""
Particle filter for long-memory linear-Gaussian state-space models.

Particle paths live in a :class:`~nmsmc.pathtree.TrajectoryTree`; the
conditional mean of each new state is a lag-weighted sum over its whole path,
obtained for all particles in one pass over the tree.  The filter resamples
at every step and returns the log of the usual product-of-average-weights
likelihood estimator.

Random numbers
--------------
Each run owns one counter-based stream, ``numpy.random.Generator(Philox(seed))``.
Draws are taken in a fixed order so that other implementations can replay
them exactly:

1. ``normals = standard_normal((T, N, n))`` -- ``normals[k-1, i]`` drives the
   proposal of particle ``i`` at step ``k``;
2. ``uniforms = random((T, m))`` -- ``uniforms[k-1]`` drives the resampling
   that picks the ancestors used at step ``k``.  ``m`` is 1 for systematic and
   ``N`` for multinomial resampling.

The initial state is a point mass at zero, so step 0 consumes no draws.
"""

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .fom import Dataset, FoModel
from .pathtree import TrajectoryTree, _insert, _new_arena, _reserve, _weighted_sums

__all__ = [
    "FilterConfig", "FilterOutput", "systematic_resample", "multinomial_resample",
    "ess", "locally_optimal_step", "locally_optimal_moments", "run_filter",
    "draw_randomness",
]

PROPOSALS = ("bootstrap", "locally_optimal")
RESAMPLERS = ("systematic", "multinomial")
_LOG_2PI = float(np.log(2 * np.pi))


@dataclass
class FilterConfig:
    n_particles: int = 128
    proposal: str = "locally_optimal"
    resampling: str = "systematic"
    seed: int = 0

    def __post_init__(self):
        if int(self.n_particles) < 1:
            raise ValueError("n_particles must be >= 1")
        if self.proposal not in PROPOSALS:
            raise ValueError(f"proposal must be one of {PROPOSALS}")
        if self.resampling not in RESAMPLERS:
            raise ValueError(f"resampling must be one of {RESAMPLERS}")


@dataclass
class FilterOutput:
    log_likelihood: float
    final_tree: TrajectoryTree
    per_step_ess: np.ndarray
    node_count_trace: np.ndarray
    log_increments: np.ndarray = field(repr=False)
    final_log_weights: np.ndarray = field(repr=False)

    def trace_csv(self, path) -> None:
        """Write the per-step diagnostics as ``k,ess,node_count,log_incr``."""
        with open(path, "w") as fh:
            fh.write("k,ess,node_count,log_incr\n")
            for k, (e, c, li) in enumerate(zip(self.per_step_ess, self.node_count_trace,
                                                self.log_increments)):
                fh.write(f"{k},{float(e)!r},{int(c)},{float(li)!r}\n")


@numba.njit(cache=True)
def _systematic(weights, u, out):
    # Algorithm: normalize, sweep one comb of N evenly spaced points offset by u/N
    N = weights.shape[0]
    total = 0.0
    for i in range(N):
        total += weights[i]
    ubar = u / N
    j = 0
    s = weights[0] / total
    for k in range(N):
        while s < ubar and j < N - 1:
            j += 1
            s += weights[j] / total
        out[k] = j
        ubar += 1.0 / N


@numba.njit(cache=True)
def _multinomial(weights, uniforms, out):
    N = weights.shape[0]
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    for i in range(N):
        j = np.searchsorted(cdf, uniforms[i], side="right")
        out[i] = min(j, N - 1)


def systematic_resample(weights, u: float) -> np.ndarray:
    """Systematic resampling; returns 0-based ancestor indices in sorted order."""
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 1 or weights.size == 0:
        raise ValueError("weights must be a non-empty 1-d array")
    if np.any(weights < 0) or not np.any(weights > 0):
        raise ValueError("weights must be non-negative with at least one positive entry")
    if not 0.0 <= u < 1.0:
        raise ValueError("u must lie in [0, 1)")
    out = np.empty(weights.size, dtype=np.int64)
    _systematic(weights, float(u), out)
    return out


def multinomial_resample(weights, uniforms) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or not np.any(weights > 0):
        raise ValueError("weights must be non-negative with at least one positive entry")
    out = np.empty(weights.size, dtype=np.int64)
    _multinomial(weights, np.asarray(uniforms, dtype=float), out)
    return out


def ess(weights) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=float)
    s2 = np.sum(w ** 2)
    if s2 == 0:
        raise ValueError("all weights are zero")
    return float(np.sum(w) ** 2 / s2)


def locally_optimal_moments(model: FoModel):
    """Gain, predictive variance and proposal covariance of the optimal proposal.

    With ``x_k ~ N(phi, sx^2 I)`` and ``y_k ~ N(c + m.x_k, sy^2)``:
    ``y_k | past ~ N(c + m.phi, s)`` with ``s = sx^2 |m|^2 + sy^2`` and
    ``x_k | past, y_k ~ N(phi + g m (y - c - m.phi), sx^2 I - sx^4 m m^T / s)``
    where ``g = sx^2 / s``.
    """
    sx2 = model.sigma_x ** 2
    s = sx2 * float(model.m @ model.m) + model.sigma_y ** 2
    gain = sx2 / s
    cov = sx2 * np.eye(model.n) - sx2 * gain * np.outer(model.m, model.m)
    return gain, s, cov


def _cov_factor(cov):
    # symmetric square root; works for the rank-deficient sigma_y -> 0 limit
    vals, vecs = np.linalg.eigh(cov)
    return np.ascontiguousarray(vecs * np.sqrt(np.clip(vals, 0.0, None)))


def _check_battery(model: FoModel):
    if not model.is_battery_form:
        raise ValueError("locally optimal proposal needs the battery form "
                         "(two states summed into the output)")


def locally_optimal_step(model: FoModel, phi, c_k: float, y_k: float, rng):
    """Draw ``x_k`` from the locally optimal proposal for one particle.

    Returns ``(x_k, log_weight)`` where the weight is the predictive density
    of ``y_k`` given the particle's past.
    """
    _check_battery(model)
    phi = np.asarray(phi, dtype=float)
    gain, s, cov = locally_optimal_moments(model)
    zeta = c_k + phi.sum()
    mean = phi + gain * (y_k - zeta) * model.m
    x = mean + _cov_factor(cov) @ rng.standard_normal(model.n)
    logw = -0.5 * (_LOG_2PI + np.log(s)) - 0.5 * (y_k - zeta) ** 2 / s
    return x, float(logw)


def draw_randomness(seed, T: int, N: int, n: int, resampling: str):
    """The filter's random inputs, in their documented draw order."""
    rng = np.random.Generator(np.random.Philox(seed))
    normals = rng.standard_normal((T, N, n))
    uniforms = rng.random((T, N if resampling == "multinomial" else 1))
    return normals, uniforms


@numba.njit(cache=True)
def _log_mean_exp(logw, w):
    N = logw.shape[0]
    mx = -np.inf
    for i in range(N):
        if logw[i] > mx:
            mx = logw[i]
    if mx == -np.inf:
        for i in range(N):
            w[i] = 0.0
        return -np.inf
    total = 0.0
    for i in range(N):
        w[i] = np.exp(logw[i] - mx)
        total += w[i]
    return mx + np.log(total / N)


@numba.njit(cache=True)
def _ess_kernel(w):
    s1 = 0.0
    s2 = 0.0
    for i in range(w.shape[0]):
        s1 += w[i]
        s2 += w[i] * w[i]
    return s1 * s1 / s2


@numba.njit(cache=True)
def _filter_kernel(lag_coeff, b, m, d, sigma_y, u, y, N, optimal, multinomial,
                   factor, gain, pred_var, normals, uniforms, capacity):
    n = lag_coeff.shape[1]
    T = y.shape[0] - 1
    roots = np.zeros((N, n))
    x, parent, refcount, depth, acc, leaves, meta = _new_arena(roots, capacity)

    ess_trace = np.full(T + 1, np.nan)
    count_trace = np.zeros(T + 1, dtype=np.int64)
    incr = np.full(T + 1, np.nan)
    logw = np.empty(N)
    w = np.empty(N)
    anc = np.empty(N, dtype=np.int64)
    phi_all = np.empty((N, n))
    new = np.empty((N, n))
    b_term = np.empty(n)
    sy2 = sigma_y * sigma_y
    log_norm_y = -0.5 * (np.log(2 * np.pi) + np.log(sy2))
    log_norm_pred = -0.5 * (np.log(2 * np.pi) + np.log(pred_var))

    # step 0: every particle starts at the origin
    r0 = y[0] - d * u[0]
    for i in range(N):
        logw[i] = log_norm_y - 0.5 * r0 * r0 / sy2
    loglik = _log_mean_exp(logw, w)
    incr[0] = loglik
    ess_trace[0] = _ess_kernel(w)
    count_trace[0] = meta[1]

    for k in range(1, T + 1):
        if multinomial:
            _multinomial(w, uniforms[k - 1], anc)
        else:
            _systematic(w, uniforms[k - 1, 0], anc)
        for c in range(n):
            b_term[c] = b[c] * u[k - 1]
        _weighted_sums(x, parent, depth, acc, leaves, meta, lag_coeff, b_term, phi_all)
        c_k = d * u[k]
        for i in range(N):
            a = anc[i]
            z = normals[k - 1, i]
            if optimal:
                zeta = c_k
                for c in range(n):
                    zeta += m[c] * phi_all[a, c]
                innov = y[k] - zeta
                for c in range(n):
                    val = phi_all[a, c] + gain * m[c] * innov
                    for r in range(n):
                        val += factor[c, r] * z[r]
                    new[i, c] = val
                logw[i] = log_norm_pred - 0.5 * innov * innov / pred_var
            else:
                pred = c_k
                for c in range(n):
                    new[i, c] = phi_all[a, c] + factor[c, c] * z[c]
                    pred += m[c] * new[i, c]
                r = y[k] - pred
                logw[i] = log_norm_y - 0.5 * r * r / sy2
        x, parent, refcount, depth, acc = _reserve(
            x, parent, refcount, depth, acc, leaves, meta, N)
        _insert(x, parent, refcount, depth, leaves, meta, anc, new)
        li = _log_mean_exp(logw, w)
        incr[k] = li
        count_trace[k] = meta[1]
        loglik += li
        if li == -np.inf:
            break
        ess_trace[k] = _ess_kernel(w)
    return loglik, ess_trace, count_trace, incr, logw, x, parent, refcount, depth, acc, leaves, meta


def run_filter(model: FoModel, data: Dataset, cfg: FilterConfig,
               randomness=None) -> FilterOutput:
    """Run the particle filter and return the log-likelihood estimate.

    ``randomness`` may supply ``(normals, uniforms)`` directly (same shapes as
    :func:`draw_randomness`) to replay a stream; otherwise it is drawn from
    ``cfg.seed``.  If every weight underflows at some step the estimate is
    ``-inf`` and the filter stops there.
    """
    T = data.horizon
    if T != model.horizon:
        raise ValueError(f"dataset horizon {T} does not match model horizon {model.horizon}")
    N = int(cfg.n_particles)
    n = model.n
    optimal = cfg.proposal == "locally_optimal"
    if optimal:
        _check_battery(model)
        gain, pred_var, cov = locally_optimal_moments(model)
        factor = _cov_factor(cov)
    else:
        gain, pred_var = 0.0, 1.0
        factor = model.sigma_x * np.eye(n)
    if randomness is None:
        randomness = draw_randomness(cfg.seed, T, N, n, cfg.resampling)
    normals, uniforms = randomness
    capacity = int(T + 16 * N * max(np.log(N), 1.0) + N)
    (loglik, ess_trace, count_trace, incr, logw, *arena) = _filter_kernel(
        np.ascontiguousarray(model.coeff.T), model.b, model.m, model.d, model.sigma_y,
        data.u, data.y, N, optimal, cfg.resampling == "multinomial",
        factor, gain, pred_var, np.ascontiguousarray(normals),
        np.ascontiguousarray(uniforms), capacity)
    return FilterOutput(
        log_likelihood=float(loglik),
        final_tree=TrajectoryTree._from_arena(*arena),
        per_step_ess=ess_trace,
        node_count_trace=count_trace,
        log_increments=incr,
        final_log_weights=logw.copy(),
    )
