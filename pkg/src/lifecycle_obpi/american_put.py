"""American put on the optimal portfolio, struck at the guarantee plus human capital.

The floor is k(t, d) = exp(int_0^t (r_g + mu)) * (fraction * x0 + d), where the
accrual D(t) = int_0^t exp(-int_0^s (r_g + mu)) (l - c - mu p) ds.  With
consumption c = p = y M / H the accrual is affine in the portfolio scale y:
D = A(t) - y * B(t), with A deterministic and B carried by the unit paths.
This lets one simulation price the put for any scale, or for a different
scale on every path.

Pricing is Longstaff-Schwartz regression Monte Carlo under Q on the state
(Y, Z, D).
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .coefficients import Constant
from .dual import DualSolution
from .market import Model, TimeGrid, human_capital_grid, step_integrals
from .measure import risk_prices
from .rng import DEFAULT_BLOCK, generator
from .strategy import UnitPaths, jump_factor, simulate_unit_paths


# ---------------------------------------------------------------------------
# guarantee

@dataclass(frozen=True)
class GuaranteeSpec:
    kind: str = "rate_guarantee"  # or "zero"
    r_g: Callable = field(default_factory=lambda: Constant(0.0))
    fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "rate_guarantee"):
            raise ValueError(f"unknown guarantee kind {self.kind!r}")
        if self.fraction < 0:
            raise ValueError("guarantee fraction must be non-negative")

    def check(self, model: Model, times) -> list[str]:
        bad = np.asarray(self.r_g(times)) > np.asarray(model.market.r(times)) + 1e-15
        return ["guaranteed rate r_g exceeds r"] if np.any(bad) else []


@dataclass(frozen=True)
class GuaranteeCurves:
    """Deterministic pieces of the floor on a time grid (all measured from 0)."""

    times: np.ndarray
    growth: np.ndarray  # exp(int_0^t (r_g + mu))
    income_accrual: np.ndarray  # A(t) = int_0^t exp(-int_0^s (r_g + mu)) l(s) ds
    g: np.ndarray  # human capital
    disc: np.ndarray  # exp(-int_0^t (r + mu))


def guarantee_curves(spec: GuaranteeSpec, model: Model, times: np.ndarray, n_fine: int = 8000) -> GuaranteeCurves:
    p, m = model.market, model.mortality
    times = np.asarray(times, dtype=float)
    fine = np.union1d(np.linspace(0.0, times[-1], n_fine + 1), times)
    log_growth = integrate.cumulative_simpson(spec.r_g(fine) + m.mu(fine), x=fine, initial=0.0)
    acc = integrate.cumulative_simpson(np.exp(-log_growth) * model.income.ell(fine), x=fine, initial=0.0)
    log_disc = integrate.cumulative_simpson(p.r(fine) + m.mu(fine), x=fine, initial=0.0)
    idx = np.searchsorted(fine, times)
    return GuaranteeCurves(times, np.exp(log_growth[idx]), acc[idx],
                           human_capital_grid(p, m, model.income, times), np.exp(-log_disc[idx]))


def guarantee_level(spec: GuaranteeSpec, x0: float, growth, d):
    """k(t, d) given growth = exp(int_0^t (r_g + mu)) and accrual d."""
    if spec.kind == "zero":
        return np.zeros(np.broadcast(np.asarray(growth), np.asarray(d)).shape)
    return np.asarray(growth) * (spec.fraction * x0 + np.asarray(d))


def accrue(spec: GuaranteeSpec, model: Model, times: np.ndarray, consumption, insurance) -> np.ndarray:
    """D on a grid from given consumption/insurance paths (trapezoid); paths are (n_times, ...)."""
    m = model.mortality
    log_growth = np.concatenate([[0.0], np.cumsum(step_integrals(lambda t: spec.r_g(t) + m.mu(t), times))])
    w = np.exp(-log_growth)
    shape = (-1,) + (1,) * (np.ndim(consumption) - 1)
    f = (w.reshape(shape) * (model.income.ell(times).reshape(shape) - consumption
                             - m.mu(times).reshape(shape) * insurance))
    dt = np.diff(times).reshape(shape)
    return np.concatenate([np.zeros_like(f[:1]), np.cumsum(0.5 * (f[1:] + f[:-1]) * dt, axis=0)])


# ---------------------------------------------------------------------------
# regression basis

@dataclass
class RegressionFit:
    """Least-squares fit on monomials of standardized state variables."""

    active: tuple  # indices of the state variables used (0=Y, 1=Z, 2=D)
    means: np.ndarray
    stds: np.ndarray
    exponents: np.ndarray  # (n_terms, n_active)
    coef: np.ndarray

    def design(self, states) -> np.ndarray:
        cols = [(states[i] - mu) / sd for i, mu, sd in zip(self.active, self.means, self.stds)]
        n = np.shape(states[0])[0] if np.ndim(states[0]) else 1
        X = np.ones((n, len(self.exponents)))
        for j, e in enumerate(self.exponents):
            for v, power in zip(cols, e):
                if power:
                    X[:, j] *= v ** power
        return X

    def predict(self, states) -> np.ndarray:
        states = [np.atleast_1d(np.asarray(s, dtype=float)) for s in states]
        n = max(len(s) for s in states)
        states = [np.broadcast_to(s, (n,)) for s in states]
        return self.design(states) @ self.coef


def _exponents(n_vars: int, degree: int) -> np.ndarray:
    out = [(0,) * n_vars]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_vars), deg):
            e = [0] * n_vars
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return np.array(out, dtype=int).reshape(len(out), n_vars)


def fit_regression(states, target, degree: int, rcond: float = 1e-12) -> tuple[RegressionFit, np.ndarray]:
    """Fit target on total-degree <= degree monomials; constant state variables are dropped.

    A rank-deficient design lowers the degree, with a warning.
    Returns the fit and the in-sample fitted values.
    """
    active, means, stds = [], [], []
    for i, s in enumerate(states):
        mu, sd = float(np.mean(s)), float(np.std(s))
        if sd > 1e-12 * (1.0 + abs(mu)):
            active.append(i)
            means.append(mu)
            stds.append(sd)
    deg = degree
    while True:
        exps = _exponents(len(active), deg if active else 0)
        fit = RegressionFit(tuple(active), np.array(means), np.array(stds), exps, np.zeros(len(exps)))
        X = fit.design([states[i] for i in range(len(states))])
        coef, _, rank, sv = np.linalg.lstsq(X, target, rcond=None)
        if X.shape[0] >= X.shape[1] and rank == X.shape[1] and sv[-1] > rcond * sv[0]:
            fit.coef = coef
            return fit, X @ coef
        if deg == 0:
            fit.coef = np.array([float(np.mean(target))])
            return fit, np.full(len(target), fit.coef[0])
        warnings.warn(f"rank-deficient regression design; reducing basis degree {deg} -> {deg - 1}", stacklevel=2)
        deg -= 1


# ---------------------------------------------------------------------------
# pricing

@dataclass
class BoundaryEstimate:
    times: np.ndarray
    d_edges: np.ndarray  # (n_dates, n_bins + 1)
    b: np.ndarray  # (n_dates, n_bins); NaN where no exercise was observed
    z_edges: Optional[np.ndarray] = None  # (n_dates, n_zbins + 1)
    b_z: Optional[np.ndarray] = None  # (n_dates, n_bins, n_zbins)

    def lookup(self, t, d) -> np.ndarray:
        """Nearest d-bin at the bracketing dates, linear in t; missing bins count as 0."""
        d = np.atleast_1d(np.asarray(d, dtype=float))
        t = float(t)
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1))
        if i == len(self.times) - 1 or t <= self.times[0]:
            return self._at(i, d)
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return (1 - w) * self._at(i, d) + w * self._at(i + 1, d)

    def _at(self, i, d):
        edges = self.d_edges[i]
        centres = 0.5 * (edges[1:] + edges[:-1])
        j = np.abs(d[:, None] - centres[None, :]).argmin(axis=1)
        v = self.b[i, j]
        return np.where(np.isnan(v), 0.0, v)

    @property
    def empty(self) -> bool:
        return bool(np.all(np.isnan(self.b)))


@dataclass
class PutQuote:
    price: float
    se: float
    european: float
    european_se: float
    intrinsic0: float
    times: np.ndarray  # exercise dates
    exercise_flags: np.ndarray  # (n_dates, n) bool
    y: np.ndarray  # (n_dates, n) portfolio values on the pricing paths
    d: np.ndarray
    z: np.ndarray
    k: np.ndarray  # floor k(t, D) on the pricing paths
    g: np.ndarray  # human capital at the dates
    value_fits: list  # per date: RegressionFit of the continuation value (all paths)
    curves: GuaranteeCurves
    spec: GuaranteeSpec
    x0: float
    degree: int
    t0_fit: Optional[RegressionFit] = None
    scale: float = 1.0
    boundary: Optional[BoundaryEstimate] = None

    def intrinsic(self, j: int, y, d):
        k = guarantee_level(self.spec, self.x0, self.curves.growth[j], d)
        return np.maximum(k + self.curves.g[j] - y, 0.0)

    def value(self, j: int, y, z, d):
        """American value at date j: max(intrinsic, fitted continuation); zero at maturity."""
        intr = self.intrinsic(j, y, d)
        if j == len(self.times) - 1:
            return intr
        fit = self.value_fits[j]
        if fit is None:
            return intr
        return np.maximum(intr, fit.predict([y, z, d]))

    def price_at(self, y0):
        """t = 0 price as a smooth function of the scale (needs a dispersed run)."""
        if self.t0_fit is None:
            raise ValueError("price_at needs a quote computed with initial dispersion")
        y0 = np.asarray(y0, dtype=float)
        intr = self.intrinsic(0, y0, 0.0)
        fit = self.t0_fit.predict([np.atleast_1d(y0), np.zeros(np.size(y0)), np.zeros(np.size(y0))])
        out = np.maximum(intr, fit)
        return float(out[0]) if y0.ndim == 0 else out


@dataclass
class PricingContext:
    """Unit paths and deterministic curves shared by all put valuations."""

    model: Model
    dual: DualSolution
    spec: GuaranteeSpec
    unit: UnitPaths
    curves: GuaranteeCurves
    degree: int = 3

    @property
    def times(self):
        return self.unit.times

    @property
    def n_paths(self) -> int:
        return self.unit.m.shape[1]


def build_context(model: Model, dual: DualSolution, spec: GuaranteeSpec, grid: TimeGrid, n_paths: int,
                  seed: int, exercise_every: int = 5, degree: int = 3, stream: str = "put",
                  block_size: int = DEFAULT_BLOCK, threads: int = 1) -> PricingContext:
    issues = spec.check(model, grid.times)
    if issues:
        raise ValueError("; ".join(issues))
    unit = simulate_unit_paths(model, dual, grid, n_paths, seed, "Q", exercise_every, stream,
                               accrual_rate=spec.r_g, block_size=block_size, threads=threads)
    curves = guarantee_curves(spec, model, unit.times)
    return PricingContext(model, dual, spec, unit, curves, degree)


def _t0_estimate(y0s, samples, centre, degree):
    """Value and standard error at the centre scale from samples at dispersed scales."""
    if np.ptp(y0s) == 0:
        return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(samples.size)), None
    zeros = np.zeros_like(y0s)
    fit, fitted = fit_regression([y0s, zeros, zeros], samples, degree)
    X = fit.design([np.array([centre]), np.zeros(1), np.zeros(1)])
    Xs = fit.design([y0s, zeros, zeros])
    resid = samples - fitted
    s2 = resid @ resid / max(len(samples) - Xs.shape[1], 1)
    cov = s2 * np.linalg.pinv(Xs.T @ Xs)
    return float((X @ fit.coef)[0]), float(np.sqrt(max((X @ cov @ X.T)[0, 0], 0.0))), fit


def lsm_price(ctx: PricingContext, y0, degree: int | None = None, itm_only: bool = True,
              keep_paths: bool = True) -> PutQuote:
    """Longstaff-Schwartz price of the put at t = 0 for portfolio scale ``y0``.

    ``y0`` is a scalar, or an array with one starting scale per path (its
    mean is the quoted centre).  Exercise decisions use regressions on the
    in-the-money paths; the continuation value kept for re-pricing along
    other paths is fitted on all paths.
    """
    degree = ctx.degree if degree is None else degree
    spec, c, u = ctx.spec, ctx.curves, ctx.unit
    n = ctx.n_paths
    ys = np.broadcast_to(np.asarray(y0, dtype=float), (n,))
    centre = float(np.mean(ys))
    x0 = ctx.model.market.x0
    nd = len(c.times)
    Y = ys[None, :] * u.m
    D = c.income_accrual[:, None] - ys[None, :] * u.b
    K = guarantee_level(spec, x0, c.growth[:, None], D)
    intr = np.maximum(K + c.g[:, None] - Y, 0.0)
    flags = np.zeros((nd, n), dtype=bool)
    flags[-1] = intr[-1] > 0
    cf = intr[-1].copy()
    fits: list = [None] * nd
    for j in range(nd - 2, 0, -1):
        cf *= c.disc[j + 1] / c.disc[j]
        states = [Y[j], u.z[j], D[j]]
        fits[j], _ = fit_regression(states, cf, degree)
        itm = intr[j] > 0
        if itm_only and np.count_nonzero(itm) > 4 * len(fits[j].exponents):
            fit_itm, cont = fit_regression([s[itm] for s in states], cf[itm], degree)
            ex_sub = intr[j][itm] > cont
            ex = np.zeros(n, dtype=bool)
            ex[np.flatnonzero(itm)[ex_sub]] = True
        elif itm_only:
            ex = np.zeros(n, dtype=bool)
            if np.any(itm):
                cont_all = fits[j].predict([s[itm] for s in states])
                ex[np.flatnonzero(itm)[intr[j][itm] > cont_all]] = True
        else:
            ex = (intr[j] > 0) & (intr[j] > fits[j].predict(states))
        cf = np.where(ex, intr[j], cf)
        flags[j] = ex
    cf *= c.disc[1] / c.disc[0]
    cont0, se, t0_fit = _t0_estimate(ys, cf, centre, degree)
    intr0 = float(np.maximum(guarantee_level(spec, x0, c.growth[0], c.income_accrual[0]) + c.g[0] - centre, 0.0))
    price = max(intr0, cont0)
    flags[0] = intr[0] > 0 if intr0 >= cont0 and intr0 > 0 else False
    euro_s = intr[-1] * c.disc[-1] / c.disc[0]
    euro, euro_se, _ = _t0_estimate(ys, euro_s, centre, degree)
    q = PutQuote(price, se, euro, euro_se, intr0, c.times, flags,
                 Y if keep_paths else None, D if keep_paths else None, u.z if keep_paths else None,
                 K if keep_paths else None, c.g, fits, c, spec, x0, degree, t0_fit, centre)
    return q


def exercise_boundary(quote: PutQuote, d_bins: int = 20, z_bins: int = 10) -> BoundaryEstimate:
    """Largest Y among exercised samples per (t, d)-bin; empty bins are NaN."""
    nd, n = quote.exercise_flags.shape
    b = np.full((nd, d_bins), np.nan)
    bz = np.full((nd, d_bins, z_bins), np.nan)
    d_edges = np.empty((nd, d_bins + 1))
    z_edges = np.empty((nd, z_bins + 1))
    for j in range(nd):
        dj, zj, yj = quote.d[j], quote.z[j], quote.y[j]
        lo, hi = float(dj.min()), float(dj.max())
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        d_edges[j] = np.linspace(lo, hi, d_bins + 1)
        zlo, zhi = float(zj.min()), float(zj.max())
        if zhi - zlo < 1e-12:
            zlo, zhi = zlo - 0.5, zhi + 0.5
        z_edges[j] = np.linspace(zlo, zhi, z_bins + 1)
        ex = quote.exercise_flags[j]
        if not np.any(ex):
            continue
        di = np.clip(np.searchsorted(d_edges[j], dj[ex], side="right") - 1, 0, d_bins - 1)
        zi = np.clip(np.searchsorted(z_edges[j], zj[ex], side="right") - 1, 0, z_bins - 1)
        np.fmax.at(b[j], di, yj[ex])
        np.fmax.at(bz[j], (di, zi), yj[ex])
    est = BoundaryEstimate(quote.times, d_edges, b, z_edges, bz)
    quote.boundary = est
    return est


def boundary_violations(quote: PutQuote, est: BoundaryEstimate) -> int:
    """Populated bins whose b exceeds k(t, upper bin edge) + g(t)."""
    kk = guarantee_level(quote.spec, quote.x0, quote.curves.growth[:, None], est.d_edges[:, 1:])
    cap = kk + quote.curves.g[:, None]
    ok = np.isnan(est.b) | (est.b <= cap + 1e-12 * (1 + np.abs(cap)))
    return int(np.count_nonzero(~ok))


# ---------------------------------------------------------------------------
# generator of (Y, Z, D) under Q

def generator_residual(model: Model, dual: DualSolution, phi: Callable, t: float, y: float, z: float,
                       d: float = 0.0, spec: GuaranteeSpec | None = None,
                       steps: tuple = (1e-4, 1e-4, 1e-3, 1e-4)) -> float:
    """A phi - (r + mu) phi by central finite differences.

    ``phi(t, y, z, d)``.  The diffusion part includes the mixed y-z term
    -nu/(1-delta) * y * phi_yz that the common loading on W1 implies; jumps
    arrive at rate psi_hat*lambda and scale y by psi_hat^(-1/(1-delta)).
    """
    p, m = model.market, model.mortality
    T = model.T
    ht, rel_y, hz, hd = steps
    hy = rel_y * max(abs(y), 1.0)
    if t - ht < 0.0 or t + ht > T:
        raise ValueError("finite-difference stencil leaves [0, T]")
    if y - hy <= 0.0:
        raise ValueError("finite-difference stencil leaves y > 0")
    dl = model.delta
    psi = float(dual.psi(t, z))
    nu, th = (float(v) for v in risk_prices(p, t, z, psi))
    H = float(dual.annuity(t, z))
    mu, r, lam = float(m.mu(t)), float(p.r(t)), float(p.lam(t))
    J = float(jump_factor(psi, dl))
    f = phi
    v0 = f(t, y, z, d)
    phi_t = (f(t + ht, y, z, d) - f(t - ht, y, z, d)) / (2 * ht)
    phi_y = (f(t, y + hy, z, d) - f(t, y - hy, z, d)) / (2 * hy)
    phi_z = (f(t, y, z + hz, d) - f(t, y, z - hz, d)) / (2 * hz)
    phi_yy = (f(t, y + hy, z, d) - 2 * v0 + f(t, y - hy, z, d)) / hy ** 2
    phi_zz = (f(t, y, z + hz, d) - 2 * v0 + f(t, y, z - hz, d)) / hz ** 2
    phi_yz = (f(t, y + hy, z + hz, d) - f(t, y + hy, z - hz, d)
              - f(t, y - hy, z + hz, d) + f(t, y - hy, z - hz, d)) / (4 * hy * hz)
    drift_y = (r + mu - (1.0 + mu) / H - (J - 1.0) * psi * lam) * y
    out = (phi_t + drift_y * phi_y + (float(p.eta(t, z)) + nu) * phi_z
           + 0.5 * (nu * nu + th * th) / (1 - dl) ** 2 * y * y * phi_yy + 0.5 * phi_zz
           - nu / (1 - dl) * y * phi_yz
           + psi * lam * (f(t, J * y, z, d) - v0))
    if spec is not None and spec.kind != "zero":
        lg = float(np.sum(step_integrals(lambda s: spec.r_g(s) + m.mu(s), np.linspace(0.0, t, 401))))
        drift_d = np.exp(-lg) * (float(model.income.ell(t)) - (1.0 + mu) * y / H)
        phi_d = (f(t, y, z, d + hd) - f(t, y, z, d - hd)) / (2 * hd)
        out += drift_d * phi_d
    return float(out - (r + mu) * v0)
