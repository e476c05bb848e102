"""
Fractional-order battery equivalent-circuit model.

The circuit is R_inf in series with a parallel R1 || CPE(C1, alpha1) pair and
a Warburg element CPE(C2, alpha2) whose parallel resistance is open.  After
Grunwald-Letnikov discretization the voltages across the two CPEs evolve as

    x_{k+1} = sum_{j=0}^{k} A_j x_{k-j} + B u_k + sigma_x eps_k
    y_k     = x_{k,1} + x_{k,2} + R_inf u_k + sigma_y eta_k

with diagonal A_j.  Because A_j never vanishes the state process is not
Markovian: each step needs the full past trajectory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.signal import max_len_seq

__all__ = [
    "BatteryTheta", "FoModel", "Dataset", "THETA_STAR", "PARAM_NAMES",
    "binom_frac", "gl_coefficients", "build_model", "linear_model",
    "step_mean", "simulate", "gen_prbs", "impedance", "is_commensurate",
]

PARAM_NAMES = ("R_inf", "R1", "C1", "C2", "alpha1", "alpha2")


@dataclass(frozen=True)
class BatteryTheta:
    """Battery parameter vector ``[R_inf, R1, C1, C2, alpha1, alpha2]``."""

    r_inf: float
    r1: float
    c1: float
    c2: float
    alpha1: float
    alpha2: float

    def __post_init__(self):
        values = self.to_array()
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValueError(f"all battery parameters must be positive, got {values}")
        if not (self.alpha1 < 1 and self.alpha2 < 1):
            raise ValueError("fractional orders must lie in (0, 1)")

    def to_array(self) -> np.ndarray:
        return np.array([self.r_inf, self.r1, self.c1, self.c2,
                         self.alpha1, self.alpha2], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "BatteryTheta":
        values = [float(v) for v in values]
        if len(values) != 6:
            raise ValueError(f"expected 6 parameters, got {len(values)}")
        return cls(*values)

    def to_dict(self) -> dict:
        return dict(zip(PARAM_NAMES, self.to_array().tolist()))


THETA_STAR = BatteryTheta(0.01, 0.2, 3.0, 400.0, 0.8, 0.5)


@dataclass(frozen=True)
class FoModel:
    """Linear-Gaussian state-space model with diagonal long-memory transitions.

    ``coeff[i, j]`` multiplies state component ``i`` at lag ``j``; ``b`` is the
    input gain, ``m`` the output row and ``d`` the feedthrough.
    """

    n: int
    ts: float
    coeff: np.ndarray
    b: np.ndarray
    m: np.ndarray
    d: float
    sigma_x: float
    sigma_y: float
    horizon: int

    def __post_init__(self):
        if self.coeff.shape != (self.n, self.horizon + 1):
            raise ValueError(
                f"coeff must have shape {(self.n, self.horizon + 1)}, got {self.coeff.shape}")
        for arr in (self.coeff, self.b, self.m):
            arr.setflags(write=False)

    @property
    def is_battery_form(self) -> bool:
        return self.n == 2 and bool(np.all(self.m == 1.0))


@dataclass
class Dataset:
    u: np.ndarray
    y: np.ndarray
    ts: float
    seed: Optional[int] = None
    theta_true: Optional[BatteryTheta] = None
    sigma_x: Optional[float] = None
    sigma_y: Optional[float] = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.u.shape != self.y.shape or self.u.ndim != 1:
            raise ValueError("u and y must be 1-d sequences of identical length")
        if len(self.u) < 2:
            raise ValueError("a dataset needs at least two time points")

    @property
    def horizon(self) -> int:
        return len(self.y) - 1

    def to_csv(self, path) -> None:
        """Write ``k,u,y`` rows plus a JSON metadata sidecar next to ``path``."""
        path = Path(path)
        k = np.arange(len(self.u))
        with open(path, "w") as fh:
            fh.write("k,u,y\n")
            for i, ui, yi in zip(k, self.u, self.y):
                fh.write(f"{i},{float(ui)!r},{float(yi)!r}\n")
        meta = {
            "ts": self.ts,
            "seed": self.seed,
            "theta_true": None if self.theta_true is None else self.theta_true.to_dict(),
            "sigma_x": self.sigma_x,
            "sigma_y": self.sigma_y,
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        header = path.read_text().splitlines()[0].strip()
        if header != "k,u,y":
            raise ValueError(f"unexpected dataset header {header!r}")
        meta = {}
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            meta = json.loads(sidecar.read_text())
        theta = meta.get("theta_true")
        return cls(
            u=table[:, 1], y=table[:, 2], ts=float(meta.get("ts", np.nan)),
            seed=meta.get("seed"),
            theta_true=None if theta is None else BatteryTheta.from_array(
                [theta[name] for name in PARAM_NAMES]),
            sigma_x=meta.get("sigma_x"), sigma_y=meta.get("sigma_y"),
        )


def binom_frac(alpha: float, j: int) -> float:
    """Generalized binomial coefficient C(alpha, j) by the product recursion."""
    if j < 0:
        raise ValueError("j must be non-negative")
    out = 1.0
    for i in range(1, j + 1):
        out *= (alpha - i + 1) / i
    return out


def _binom_sequence(alpha: float, jmax: int) -> np.ndarray:
    # C(alpha, 0..jmax), same recursion as binom_frac, vectorized with cumprod
    i = np.arange(1, jmax + 1, dtype=float)
    return np.concatenate(([1.0], np.cumprod((alpha - i + 1) / i)))


def gl_coefficients(alpha: float, a0: float, horizon: int) -> np.ndarray:
    """Lag coefficients ``[a0, -C(a,2), C(a,3), ...]`` for lags 0..horizon."""
    binoms = _binom_sequence(alpha, horizon + 1)
    lags = np.arange(horizon + 1)
    out = np.where(lags % 2 == 0, 1.0, -1.0) * binoms[1:]
    out[0] = a0
    return out


def build_model(theta: BatteryTheta, ts: float, horizon: int,
                sigma_x: float, sigma_y: float) -> FoModel:
    """Discretized battery model with an open-circuit Warburg branch."""
    if not ts > 0:
        raise ValueError(f"sample time must be positive, got {ts}")
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be an integer >= 1, got {horizon}")
    if sigma_x < 0 or sigma_y <= 0:
        raise ValueError("noise scales must satisfy sigma_x >= 0, sigma_y > 0")
    horizon = int(horizon)
    ts_a1 = ts ** theta.alpha1
    ts_a2 = ts ** theta.alpha2
    coeff = np.vstack([
        gl_coefficients(theta.alpha1, theta.alpha1 - ts_a1 / (theta.r1 * theta.c1), horizon),
        gl_coefficients(theta.alpha2, theta.alpha2, horizon),
    ])
    return FoModel(
        n=2, ts=float(ts), coeff=coeff,
        b=np.array([ts_a1 / theta.c1, ts_a2 / theta.c2]),
        m=np.ones(2), d=float(theta.r_inf),
        sigma_x=float(sigma_x), sigma_y=float(sigma_y), horizon=horizon,
    )


def linear_model(coeff, b, m, d: float, sigma_x: float, sigma_y: float,
                 horizon: int, ts: float = 1.0) -> FoModel:
    """Generic model from explicit lag coefficients.

    ``coeff`` may be shorter than ``horizon + 1`` columns; missing lags are
    zero, so a single column gives an ordinary Markovian AR(1)-type model.
    """
    coeff = np.atleast_2d(np.asarray(coeff, dtype=float))
    n = coeff.shape[0]
    full = np.zeros((n, horizon + 1))
    width = min(coeff.shape[1], horizon + 1)
    full[:, :width] = coeff[:, :width]
    return FoModel(n=n, ts=float(ts), coeff=full,
                   b=np.asarray(b, dtype=float).reshape(n),
                   m=np.asarray(m, dtype=float).reshape(n), d=float(d),
                   sigma_x=float(sigma_x), sigma_y=float(sigma_y), horizon=int(horizon))


def step_mean(model: FoModel, path, u_k: float) -> np.ndarray:
    """Conditional mean of ``x_{k+1}`` given the past states ``x_{0:k}``.

    ``path`` has shape ``(k+1, n)`` in time order.
    """
    path = np.asarray(path, dtype=float).reshape(-1, model.n)
    k = path.shape[0] - 1
    if k + 1 > model.horizon:
        raise ValueError(f"path of length {k + 1} exceeds horizon {model.horizon}")
    # oldest state first, sequential accumulation; the tree traversal sums in
    # the same order so both routes agree bitwise
    terms = model.coeff[:, k::-1].T * path
    return np.add.accumulate(terms, axis=0)[-1] + model.b * u_k


def simulate(model: FoModel, u, seed: int, theta: Optional[BatteryTheta] = None) -> Dataset:
    """Draw one noisy trajectory starting from ``x_0 = 0``."""
    u = np.asarray(u, dtype=float)
    T = model.horizon
    if u.shape != (T + 1,):
        raise ValueError(f"input must have length {T + 1}, got {u.shape}")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((T, model.n))
    eta = rng.standard_normal(T + 1)
    x = np.zeros((T + 1, model.n))
    for k in range(T):
        x[k + 1] = step_mean(model, x[:k + 1], u[k]) + model.sigma_x * eps[k]
    y = x @ model.m + model.d * u + model.sigma_y * eta
    return Dataset(u=u, y=y, ts=model.ts, seed=seed, theta_true=theta,
                   sigma_x=model.sigma_x, sigma_y=model.sigma_y)


PRBS_REGISTER = 10
PRBS_TAPS = (10, 7)


def gen_prbs(length: int, magnitude: float = 1.0, ts: float = 5e-4, seed: int = 0) -> np.ndarray:
    """Maximal-length PRBS from a 10-bit Fibonacci LFSR (taps 10, 7).

    The register is clocked once per sample of period ``ts``; the initial
    register state is derived from ``seed``.  Bits map 1 -> +magnitude and
    0 -> -magnitude.  The sequence has period 1023.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if not magnitude > 0 or not ts > 0:
        raise ValueError("magnitude and ts must be positive")
    mask = (1 << PRBS_REGISTER) - 1
    state = int(np.random.default_rng(seed).integers(1, mask + 1))
    register = np.array([(state >> i) & 1 for i in range(PRBS_REGISTER)], dtype=np.int8)
    # scipy counts taps from the output end, so stage 7 of 10 is its tap 3
    bits, _ = max_len_seq(PRBS_REGISTER, state=register, length=length,
                          taps=[PRBS_REGISTER - PRBS_TAPS[1]])
    return np.where(bits == 1, magnitude, -magnitude).astype(float)


def impedance(theta: BatteryTheta, omega):
    """Complex impedance of the circuit at angular frequency ``omega`` (rad/s)."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("omega must be positive")
    jw = 1j * omega
    z = (theta.r_inf
         + theta.r1 / (1 + theta.r1 * theta.c1 * jw ** theta.alpha1)
         + 1 / (theta.c2 * jw ** theta.alpha2))
    return z if z.ndim else complex(z)


def is_commensurate(orders, base: float, tol: float = 1e-9) -> bool:
    """True when every order is (within ``tol``) a positive integer multiple of ``base``."""
    orders = np.asarray(orders, dtype=float)
    if orders.size == 0:
        raise ValueError("orders must be non-empty")
    if not base > 0 or tol < 0:
        raise ValueError("base must be positive and tol non-negative")
    ratio = orders / base
    nearest = np.rint(ratio)
    return bool(np.all((nearest >= 1) & (np.abs(ratio - nearest) <= tol)))
