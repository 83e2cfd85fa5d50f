"""Market, mortality and income model; primitive path simulation.

The risky asset follows a geometric jump-diffusion driven by two Brownian
motions and a Poisson process; its coefficients depend on a non-tradable
economic factor Z with unit diffusion.  Mortality, income, rates and the
jump intensity are deterministic functions of time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .coefficients import Constant, is_z_dependent
from .rng import DEFAULT_BLOCK, generator

Coef = Callable[..., np.ndarray]
PsiPolicy = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MarketParams:
    r: Coef
    alpha: Coef
    beta: Coef
    sigma: Coef
    gamma: Coef
    eta: Coef
    lam: Coef
    corr: float = 0.0
    s0: float = 1.0
    z0: float = 0.0
    x0: float = 10.0

    def __post_init__(self):
        if not -1.0 < self.corr < 1.0:
            raise ValueError("corr_w1w2 must lie in (-1, 1)")
        if self.s0 <= 0 or self.x0 <= 0:
            raise ValueError("s0 and x0 must be positive")

    @property
    def z_dependent(self) -> bool:
        return any(is_z_dependent(f) for f in (self.alpha, self.beta, self.sigma, self.gamma, self.eta))


@dataclass(frozen=True)
class MortalityCurve:
    mu: Coef
    T: float

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon T must be positive")


@dataclass(frozen=True)
class IncomeSpec:
    ell: Coef = field(default_factory=lambda: Constant(0.0))


@dataclass(frozen=True)
class PreferenceSpec:
    rho: Coef
    kappa: float
    delta: float

    def __post_init__(self):
        if self.delta == 0.0 or self.delta >= 1.0:
            raise ValueError("CRRA exponent delta must lie in (-inf, 1) \\ {0}")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")


@dataclass(frozen=True)
class Model:
    """Everything the solvers need, bundled."""

    market: MarketParams
    mortality: MortalityCurve
    income: IncomeSpec
    prefs: PreferenceSpec

    @property
    def T(self) -> float:
        return self.mortality.T

    @property
    def delta(self) -> float:
        return self.prefs.delta

    def replace(self, **kw) -> "Model":
        from dataclasses import replace

        return replace(self, **kw)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if self.n_steps < 1 or self.T <= self.t0:
            raise ValueError("TimeGrid needs n_steps >= 1 and T > t0")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass
class PathBundle:
    grid: TimeGrid
    w1: np.ndarray  # (n_steps, n) Brownian increments under `measure`
    w2: np.ndarray
    n_jumps: np.ndarray  # (n_steps, n) jump counts
    z: np.ndarray  # (n_steps + 1, n)
    measure: str = "P"
    s: Optional[np.ndarray] = None
    psi_policy: Optional[PsiPolicy] = None

    @property
    def n_paths(self) -> int:
        return self.z.shape[1]


def constant_policy(value: float = 1.0) -> PsiPolicy:
    def policy(t, z):
        return np.full(np.shape(z), float(value))

    policy.value = float(value)
    return policy


# ---------------------------------------------------------------------------
# quadrature of deterministic time functions

def step_integrals(f: Coef, times: np.ndarray) -> np.ndarray:
    """Per-step Simpson integrals of a function of time on a grid."""
    t0, t1 = times[:-1], times[1:]
    return (t1 - t0) / 6.0 * (f(t0) + 4.0 * f(0.5 * (t0 + t1)) + f(t1))


def cumulative_integral(f: Coef, times: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(step_integrals(f, times))])


def _quad(f: Coef, a: float, b: float) -> float:
    val, _ = integrate.quad(lambda s: float(f(s)), a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def _check_time(m: MortalityCurve, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > m.T * (1 + 1e-12)):
        raise ValueError(f"t must lie in [0, {m.T}]")
    return t


def survival_prob(m: MortalityCurve, t):
    """exp(-int_0^t mu)."""
    t = _check_time(m, t)
    out = np.exp(-np.array([_quad(m.mu, 0.0, float(s)) for s in np.atleast_1d(t)]))
    return float(out[0]) if t.ndim == 0 else out.reshape(t.shape)


def death_density(m: MortalityCurve, t):
    t = _check_time(m, t)
    out = m.mu(t) * survival_prob(m, t)
    return float(out) if t.ndim == 0 else out


def human_capital_grid(p: MarketParams, m: MortalityCurve, inc: IncomeSpec, times: np.ndarray,
                       refine: int = 4) -> np.ndarray:
    """Actuarial value of future labour income g(t) at each grid time.

    Uses cumulative Simpson on a refined uniform grid for both the inner
    discount integral and the outer income integral.
    """
    times = np.asarray(times, dtype=float)
    T = m.T
    n = max(int(np.ceil((T - times[0]) / np.min(np.diff(times)) if len(times) > 1 else 1)) * refine, 2000)
    n += n % 2
    fine = np.linspace(times[0], T, n + 1)
    rate = p.r(fine) + m.mu(fine)
    C = integrate.cumulative_simpson(rate, x=fine, initial=0.0)
    G = integrate.cumulative_simpson(np.exp(-C) * inc.ell(fine), x=fine, initial=0.0)
    Ci = np.interp(times, fine, C)
    Gi = np.interp(times, fine, G)
    # interpolation error vanishes when `times` is a sub-grid of `fine`
    g = np.exp(Ci) * (G[-1] - Gi)
    g[np.isclose(times, T)] = 0.0
    return g


def human_capital(p: MarketParams, m: MortalityCurve, inc: IncomeSpec, t):
    t = _check_time(m, t)
    out = []
    for s in np.atleast_1d(t):
        if s >= m.T:
            out.append(0.0)
            continue
        out.append(human_capital_grid(p, m, inc, np.array([s, m.T]))[0])
    out = np.array(out)
    return float(out[0]) if t.ndim == 0 else out.reshape(t.shape)


# ---------------------------------------------------------------------------
# validation

def validate_params(p: MarketParams, m: MortalityCurve, grid: TimeGrid,
                    inc: IncomeSpec | None = None, prefs: PreferenceSpec | None = None,
                    z_halfwidth: float | None = None, n_z: int = 201, K: float = 10.0,
                    lipschitz: float = 50.0) -> list[str]:
    """List every violated model assumption on the (t, z) evaluation grid."""
    hw = 6.0 * np.sqrt(m.T) if z_halfwidth is None else z_halfwidth
    t = grid.times[:, None]
    z = np.linspace(p.z0 - hw, p.z0 + hw, n_z)[None, :]
    out: list[str] = []

    vals = {}
    for name in ("r", "alpha", "beta", "sigma", "gamma", "eta", "lam"):
        v = np.broadcast_to(getattr(p, name)(t, z), np.broadcast(t, z).shape)
        if not np.all(np.isfinite(v)):
            out.append(f"{name}: non-finite values on the evaluation grid")
        vals[name] = v
    mu = m.mu(grid.times)

    if np.any(vals["gamma"] <= -1.0):
        out.append(f"gamma <= -1 (min {vals['gamma'].min():.4g}); jumps would make S non-positive")
    bound = np.abs(vals["alpha"]) + np.abs(vals["beta"])
    if np.any(bound > K):
        out.append(f"|alpha|+|beta| exceeds K={K} (max {bound.max():.4g})")
    growth = np.abs(vals["sigma"]) / (1.0 + np.abs(z))
    if np.any(growth > K):
        out.append(f"sigma violates linear growth |sigma| <= K(1+|z|), K={K} (max ratio {growth.max():.4g})")
    if np.any(vals["beta"] ** 2 + vals["sigma"] ** 2 <= 0.0):
        out.append("beta^2 + sigma^2 = 0 somewhere: singular market")
    if np.any(vals["lam"] < 0):
        out.append("lambda(t) < 0")
    if np.any(mu < 0):
        out.append("mu(t) < 0")
    if not np.all(np.isfinite(mu)):
        out.append("mu: non-finite values")
    eta_slope = np.abs(np.diff(vals["eta"], axis=1)) / np.diff(z, axis=1)
    if np.any(eta_slope > lipschitz):
        out.append(f"eta is not Lipschitz with C={lipschitz} on the grid (max slope {eta_slope.max():.4g})")
    if inc is not None and np.any(inc.ell(grid.times) < 0):
        out.append("ell(t) < 0")
    if prefs is not None:
        if prefs.delta == 0 or prefs.delta >= 1:
            out.append("delta outside (-inf, 1) \\ {0}")
        if np.any(prefs.rho(grid.times) < -1e6):
            out.append("rho(t) not finite")
    return out


# ---------------------------------------------------------------------------
# simulation

def draw_brownian(rng: np.random.Generator, n_steps: int, width: int, dt: float, corr: float = 0.0):
    """Correlated Brownian increments via the 2x2 Cholesky factor."""
    e = rng.standard_normal((n_steps, 2, width)) * np.sqrt(dt)
    dw1 = e[:, 0, :]
    dw2 = corr * e[:, 0, :] + np.sqrt(1.0 - corr * corr) * e[:, 1, :] if corr else e[:, 1, :]
    return dw1, dw2


def factor_drift(p: MarketParams, t: float, z: np.ndarray, mode: str,
                 psi: np.ndarray | None, delta: float | None) -> np.ndarray:
    eta = p.eta(t, z)
    if mode == "P":
        return eta
    from .measure import risk_prices

    nu, _ = risk_prices(p, t, z, psi)
    if mode == "Q":
        return eta + nu
    if mode == "Qtilde":
        return eta - delta / (1.0 - delta) * nu
    raise ValueError(f"unknown drift mode {mode!r}")


def jump_intensity_factor(mode: str, psi: np.ndarray | None, delta: float | None):
    if mode == "P":
        return 1.0
    if mode == "Q":
        return psi
    return psi ** (-delta / (1.0 - delta))


def simulate_factor(p: MarketParams, grid: TimeGrid, n_paths: int, seed: int,
                    drift_mode: str = "P", psi_policy: PsiPolicy | None = None,
                    delta: float | None = None, block: int = 0,
                    block_size: int | None = None) -> PathBundle:
    """Euler-Maruyama path of Z plus the Brownian and Poisson increments that drive it.

    The increments are drawn under the requested measure: under Q the jump
    counts have intensity psi*lambda, under Qtilde psi^(-delta/(1-delta))*lambda.
    """
    if drift_mode not in ("P", "Q", "Qtilde"):
        raise ValueError(f"unknown drift mode {drift_mode!r}")
    if drift_mode != "P" and psi_policy is None:
        raise ValueError(f"drift_mode={drift_mode} needs a psi policy")
    if drift_mode == "Qtilde" and delta is None:
        raise ValueError("drift_mode=Qtilde needs delta")
    if drift_mode == "P" and psi_policy is None:
        psi_policy = constant_policy(1.0)
    width = block_size or n_paths
    if width < n_paths:
        raise ValueError("block_size smaller than n_paths")
    rng = generator(seed, "factor", block)
    n, dt = grid.n_steps, grid.dt
    times = grid.times
    dw1, dw2 = draw_brownian(rng, n, width, dt, p.corr)
    lam_int = step_integrals(p.lam, times)
    z = np.empty((n + 1, width))
    z[0] = p.z0
    jumps = np.empty((n, width), dtype=np.int64)
    for k in range(n):
        psi = psi_policy(times[k], z[k])
        drift = factor_drift(p, times[k], z[k], drift_mode, psi, delta)
        if not np.all(np.isfinite(drift)):
            raise FloatingPointError(f"non-finite factor drift at step {k} (t={times[k]:.6g})")
        z[k + 1] = z[k] + drift * dt + dw1[k]
        rate = lam_int[k] * jump_intensity_factor(drift_mode, psi, delta)
        jumps[k] = rng.poisson(np.broadcast_to(rate, (width,)))
    sl = slice(0, n_paths)
    return PathBundle(grid, dw1[:, sl], dw2[:, sl], jumps[:, sl], z[:, sl],
                      measure=drift_mode, psi_policy=psi_policy)


def simulate_asset(p: MarketParams, bundle: PathBundle) -> np.ndarray:
    """Multiplicative scheme for S: log-Euler diffusion, exact (1+gamma)^dN jumps.

    For a Q-bundle the Brownian increments are Q-increments, so the Girsanov
    drifts beta*nu + sigma*theta are added back to the P drift alpha.
    """
    grid = bundle.grid
    times, dt = grid.times, grid.dt
    s = np.empty_like(bundle.z)
    s[0] = p.s0
    logs = np.full(bundle.n_paths, np.log(p.s0))
    for k in range(grid.n_steps):
        t, z = times[k], bundle.z[k]
        a, b, sg, g = p.alpha(t, z), p.beta(t, z), p.sigma(t, z), p.gamma(t, z)
        if np.any(g <= -1.0):
            raise ValueError(f"gamma <= -1 at step {k}")
        if bundle.measure == "Q":
            from .measure import risk_prices

            nu, th = risk_prices(p, t, z, bundle.psi_policy(t, z))
            a = a + b * nu + sg * th
        elif bundle.measure != "P":
            raise ValueError("simulate_asset supports P and Q bundles")
        var = b * b + sg * sg + 2.0 * p.corr * b * sg
        incr = (a - 0.5 * var) * dt + b * bundle.w1[k] + sg * bundle.w2[k] + bundle.n_jumps[k] * np.log1p(g)
        if not np.all(np.isfinite(incr)):
            raise FloatingPointError(f"non-finite asset increment at step {k}")
        logs = logs + incr
        s[k + 1] = np.exp(logs)
    bundle.s = s
    return s


def warn_if_correlated(p: MarketParams, where: str) -> None:
    if p.corr != 0.0:
        warnings.warn(f"{where}: the deflator formulas assume independent W1, W2; "
                      f"corr={p.corr} is supported in simulation only", stacklevel=3)
