"""Dual problem for CRRA utility.

The annuity factor H(t, z) solves, in backward time tau = T - t,

    V_tau = 1/2 V_zz + (b0 + b1 psi) V_z - (R0 - K(psi; 0)) V + (1 + mu),   V(T, z) = 1,

with psi the pointwise optimiser of the jump penalty K(psi; h_z), h = -ln V.
For delta > 0 the penalty is minimised, for delta < 0 it is maximised.
The drift b0 + b1 psi is the factor drift under the dual measure and
R0 - K(psi; 0) equals the effective rate r_tilde(psi) + mu + kappa/(1-delta).

Utility is U(t, c) = exp(-kappa t) c^delta / delta; future utility is
discounted with exp(-int (rho + mu)).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .market import (MarketParams, Model, MortalityCurve, PreferenceSpec, TimeGrid,
                     draw_brownian, human_capital)
from .measure import risk_prices
from .rng import DEFAULT_BLOCK, generator, map_blocks

INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


class PDEDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class UtilitySpec:
    """CRRA utility U(t, c) = exp(-kappa t) c^delta / delta and its transforms."""

    kappa: float
    delta: float

    def __post_init__(self):
        if self.delta == 0.0 or self.delta >= 1.0:
            raise ValueError("delta must lie in (-inf, 1) \\ {0}")

    @property
    def q(self) -> float:
        return -self.delta / (1.0 - self.delta)

    def U(self, t, c):
        return np.exp(-self.kappa * t) * np.asarray(c, dtype=float) ** self.delta / self.delta

    def marginal(self, t, c):
        return np.exp(-self.kappa * t) * np.asarray(c, dtype=float) ** (self.delta - 1.0)

    def inverse(self, t, x):
        """I(t, x): inverse of the marginal utility in its second argument."""
        d = self.delta
        return np.exp(-self.kappa * t / (1.0 - d)) * np.asarray(x, dtype=float) ** (-1.0 / (1.0 - d))

    def conjugate(self, t, x):
        """Legendre transform sup_c [U(t, c) - c x]."""
        d = self.delta
        return (1.0 - d) / d * np.exp(-self.kappa * t / (1.0 - d)) * np.asarray(x, dtype=float) ** self.q


@dataclass(frozen=True)
class PsiBounds:
    psi_min: float = 1e-4
    psi_max: float = 50.0

    def __post_init__(self):
        if not 0.0 < self.psi_min < self.psi_max < np.inf:
            raise ValueError("need 0 < psi_min < psi_max < inf")

    @property
    def brackets_one(self) -> bool:
        return self.psi_min < 1.0 < self.psi_max


# ---------------------------------------------------------------------------
# pointwise quantities

def _sig2(p: MarketParams, t, z):
    s2 = p.beta(t, z) ** 2 + p.sigma(t, z) ** 2
    if np.any(s2 <= 0.0):
        raise ValueError("beta^2 + sigma^2 = 0: market is singular")
    return s2


def pde_coefficients(p: MarketParams, pref: PreferenceSpec, m: MortalityCurve, t, z):
    """(b0, b1, R0) of the semi-linear equation at (t, z)."""
    d = pref.delta
    s2 = _sig2(p, t, z)
    r, a, lam = p.r(t), p.alpha(t, z), p.lam(t)
    b0 = p.eta(t, z) - d * p.beta(t, z) * (r - a) / ((1.0 - d) * s2)
    b1 = d * p.beta(t, z) * p.gamma(t, z) * lam / ((1.0 - d) * s2)
    R0 = (pref.rho(t) / (1.0 - d) - d * r / (1.0 - d) - d * (r - a) ** 2 / (2.0 * (1.0 - d) ** 2 * s2)
          + lam / (1.0 - d) + m.mu(t) + pref.kappa / (1.0 - d))
    return b0, b1, R0


def _k_parts(p: MarketParams, pref: PreferenceSpec, t, z, h_z):
    """K(psi) = lam*(psi^q + c*psi) + lin*psi + quad*psi^2, c = delta/(1-delta)."""
    d = pref.delta
    s2 = _sig2(p, t, z)
    r, a, g, lam = p.r(t), p.alpha(t, z), p.gamma(t, z), p.lam(t)
    b1 = d * p.beta(t, z) * g * lam / ((1.0 - d) * s2)
    lin = -b1 * h_z - d * (r - a) * g * lam / ((1.0 - d) ** 2 * s2)
    quad = d * g * g * lam * lam / (2.0 * (1.0 - d) ** 2 * s2)
    return lam, lin, quad


def jump_penalty_K(p: MarketParams, pref: PreferenceSpec, t, z, h_z, psi):
    """Jump penalty K(t, z, psi; h_z)."""
    psi = np.asarray(psi, dtype=float)
    if np.any(psi <= 0):
        raise ValueError("psi must be positive")
    d = pref.delta
    q = -d / (1.0 - d)
    lam, lin, quad = _k_parts(p, pref, t, z, h_z)
    return lam * (psi ** q + d / (1.0 - d) * psi) + lin * psi + quad * psi * psi


def _k_derivatives(lam, lin, quad, q, c, psi):
    d1 = lam * (q * psi ** (q - 1.0) + c) + lin + 2.0 * quad * psi
    d2 = lam * q * (q - 1.0) * psi ** (q - 2.0) + 2.0 * quad
    return d1, d2


def minimize_psi(p: MarketParams, pref: PreferenceSpec, t, z, h_z, bounds: PsiBounds = PsiBounds(),
                 tol: float = 1e-10, warn: bool = True):
    """Pointwise optimiser of K over [psi_min, psi_max] (minimum for delta>0, maximum for delta<0).

    Golden-section search to an interval below ``tol`` followed by one Newton
    polish.  Returns ``(psi_hat, at_boundary)`` as arrays of the broadcast
    shape.  Where lambda = 0 the objective is flat and psi_hat = 1.
    """
    d = pref.delta
    q, c = -d / (1.0 - d), d / (1.0 - d)
    lam, lin, quad = (np.asarray(v, dtype=float) for v in _k_parts(p, pref, t, z, h_z))
    shape = np.broadcast(lam, lin, quad).shape
    lam, lin, quad = (np.broadcast_to(v, shape).astype(float) for v in (lam, lin, quad))
    sign = 1.0 if d > 0 else -1.0

    def f(x):
        return sign * (lam * (x ** q + c * x) + lin * x + quad * x * x)

    lo = np.full(shape, bounds.psi_min)
    hi = np.full(shape, bounds.psi_max)
    x1 = hi - INV_PHI * (hi - lo)
    x2 = lo + INV_PHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    if not (np.all(np.isfinite(f1)) and np.all(np.isfinite(f2))):
        raise FloatingPointError("non-finite jump penalty inside the psi search interval")
    while np.max(hi - lo) > tol:
        left = f1 < f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        nx1 = np.where(left, hi - INV_PHI * (hi - lo), x2)
        nx2 = np.where(left, x1, lo + INV_PHI * (hi - lo))
        fn = f(np.where(left, nx1, nx2))
        f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
        x1, x2 = nx1, nx2
    psi = 0.5 * (lo + hi)

    d1, d2 = _k_derivatives(lam, lin, quad, q, c, psi)
    curv_ok = sign * d2 > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(curv_ok, d1 / d2, 0.0)
    cand = psi - step
    # near the optimum f is flat to rounding, so golden section alone resolves
    # psi only to about sqrt(machine eps); the Newton step fixes the rest
    better = curv_ok & (np.abs(step) < 1e-4) & (cand > bounds.psi_min) & (cand < bounds.psi_max)
    psi = np.where(better, cand, psi)

    edge = 10.0 * tol
    at_lo = psi - bounds.psi_min <= edge
    at_hi = bounds.psi_max - psi <= edge
    psi = np.where(at_lo, bounds.psi_min, np.where(at_hi, bounds.psi_max, psi))
    flat = lam == 0.0
    psi = np.where(flat, 1.0, psi)
    boundary = (at_lo | at_hi) & ~flat
    if d < 0 and np.any(~curv_ok & ~boundary & ~flat):
        warnings.warn("jump penalty is not locally concave at the maximiser for some points", stacklevel=2)
    if warn and np.any(boundary):
        warnings.warn(f"psi_hat hit the search bounds at {int(boundary.sum())} point(s)", stacklevel=2)
    if psi.ndim == 0:
        return float(psi), bool(boundary)
    return psi, boundary


def effective_rate(p: MarketParams, pref: PreferenceSpec, t, z, psi):
    """Effective discount rate r_tilde(t, z, psi) of the dual annuity."""
    d = pref.delta
    nu, th = risk_prices(p, t, z, psi)
    psi = np.asarray(psi, dtype=float)
    return (pref.rho(t) / (1.0 - d) - d * p.r(t) / (1.0 - d)
            - d * (nu * nu + th * th) / (2.0 * (1.0 - d) ** 2)
            - (psi ** (-d / (1.0 - d)) - 1.0 + d * (psi - 1.0) / (1.0 - d)) * p.lam(t))


def total_rate(p: MarketParams, pref: PreferenceSpec, m: MortalityCurve, t, z, psi):
    """r_tilde + mu + kappa/(1-delta): the full exponent rate of the annuity."""
    return effective_rate(p, pref, t, z, psi) + m.mu(t) + pref.kappa / (1.0 - pref.delta)


# ---------------------------------------------------------------------------
# finite-difference solver

@dataclass
class DualGrid:
    t: np.ndarray
    z: np.ndarray
    h: np.ndarray  # (n_t + 1, n_z + 1)
    psi_hat: np.ndarray
    boundary_hits: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def V(self) -> np.ndarray:
        return np.exp(-self.h)

    def interp(self, name: str, t, z):
        """Bilinear interpolation of 'h', 'V' or 'psi_hat'; z is clamped to the grid."""
        table = self.V if name == "V" else getattr(self, name)
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = np.broadcast(t, z).shape
        tt = np.broadcast_to(t, shape).ravel()
        zz = np.broadcast_to(z, shape).ravel()
        ti, tw = _locate(self.t, tt)
        zi, zw = _locate(self.z, zz)
        out = ((1 - tw) * (1 - zw) * table[ti, zi] + tw * (1 - zw) * table[ti + 1, zi]
               + (1 - tw) * zw * table[ti, zi + 1] + tw * zw * table[ti + 1, zi + 1])
        return out.reshape(shape) if shape else float(out[0])

    def psi_policy(self):
        def policy(t, z):
            return self.interp("psi_hat", t, z)

        return policy

    def value_at(self, t: float, z: float) -> float:
        return float(self.interp("V", t, z))


def _locate(nodes, x):
    x = np.clip(x, nodes[0], nodes[-1])
    i = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
    return i, (x - nodes[i]) / (nodes[i + 1] - nodes[i])


def _operator(p, pref, m, t, z, psi, dz):
    """Tridiagonal (lower, diag, upper) of L V = 1/2 V_zz + a V_z - R V with Neumann edges."""
    b0, b1, R0 = pde_coefficients(p, pref, m, t, z)
    a = np.broadcast_to(b0 + b1 * psi, z.shape)
    lam, lin, quad = _k_parts(p, pref, t, z, 0.0)
    d = pref.delta
    K0 = lam * (psi ** (-d / (1.0 - d)) + d / (1.0 - d) * psi) + lin * psi + quad * psi * psi
    R = np.broadcast_to(R0 - K0, z.shape)
    diff = 0.5 / dz ** 2
    central = np.abs(a) * dz <= 1.0
    lower = np.where(central, diff - a / (2 * dz), diff - np.minimum(a, 0.0) / dz)
    upper = np.where(central, diff + a / (2 * dz), diff + np.maximum(a, 0.0) / dz)
    diag = np.where(central, -2 * diff, -2 * diff - np.abs(a) / dz) - R
    lower, upper, diag = lower.copy(), upper.copy(), diag.copy()
    # ghost node V_{-1} = V_1 (and symmetric at the right edge): V_z = 0, V_zz = 2(V_1 - V_0)/dz^2
    diag[0], upper[0], lower[0] = -2 * diff - R[0], 2 * diff, 0.0
    diag[-1], lower[-1], upper[-1] = -2 * diff - R[-1], 2 * diff, 0.0
    return lower, diag, upper


def _apply(lower, diag, upper, v):
    out = diag * v
    out[1:] += lower[1:] * v[:-1]
    out[:-1] += upper[:-1] * v[1:]
    return out


def _grad_h(V, dz):
    """h_z = -V_z / V with central differences and zero slope at the edges."""
    hz = np.zeros_like(V)
    hz[1:-1] = -(V[2:] - V[:-2]) / (2 * dz * V[1:-1])
    return hz


def solve_pde(p: MarketParams, pref: PreferenceSpec, m: MortalityCurve, n_t: int = 200, n_z: int = 200,
              bounds: PsiBounds = PsiBounds(), z_halfwidth: float | None = None,
              blowup: float = 1e6) -> DualGrid:
    """Backward Crank-Nicolson sweep in the linear variable V = exp(-h).

    psi_hat is lagged one level: the step from t_{n+1} to t_n uses the
    optimiser computed from V at t_{n+1}.  Because psi_hat is a stationary
    point of the penalty, the lag costs only second-order error.
    ``n_t`` and ``n_z`` count intervals; z0 is always a node.
    """
    if not bounds.brackets_one:
        raise ValueError("psi bounds must satisfy psi_min < 1 < psi_max")
    T = m.T
    hw = 6.0 * np.sqrt(T) if z_halfwidth is None else float(z_halfwidth)
    if n_z % 2:
        raise ValueError("n_z must be even so that z0 sits on a node")
    t = np.linspace(0.0, T, n_t + 1)
    z = p.z0 + np.linspace(-hw, hw, n_z + 1)
    dz, dt = z[1] - z[0], T / n_t
    h = np.empty((n_t + 1, n_z + 1))
    psi_hat = np.empty_like(h)
    V = np.ones(n_z + 1)
    h[-1] = 0.0
    psi, hit = minimize_psi(p, pref, T, z, np.zeros_like(z), bounds, warn=False)
    psi_hat[-1] = psi
    hits = int(np.sum(hit))
    for n in range(n_t - 1, -1, -1):
        t_old, t_new = t[n + 1], t[n]
        lo_o, di_o, up_o = _operator(p, pref, m, t_old, z, psi, dz)
        lo_n, di_n, up_n = _operator(p, pref, m, t_new, z, psi, dz)
        src = 0.5 * dt * ((1.0 + m.mu(t_old)) + (1.0 + m.mu(t_new)))
        rhs = V + 0.5 * dt * _apply(lo_o, di_o, up_o, V) + src
        ab = np.zeros((3, n_z + 1))
        ab[0, 1:] = -0.5 * dt * up_n[:-1]
        ab[1] = 1.0 - 0.5 * dt * di_n
        ab[2, :-1] = -0.5 * dt * lo_n[1:]
        V = solve_banded((1, 1), ab, rhs)
        if not np.all(np.isfinite(V)) or np.any(V <= 0.0):
            raise PDEDivergence(f"non-finite or non-positive V at time level {n} (t={t_new:.6g})")
        h[n] = -np.log(V)
        if np.max(np.abs(h[n])) > blowup:
            raise PDEDivergence(f"|h| exceeded {blowup:g} at time level {n}")
        psi, hit = minimize_psi(p, pref, t_new, z, _grad_h(V, dz), bounds, warn=False)
        psi_hat[n] = psi
        hits += int(np.sum(hit))
    if hits:
        warnings.warn(f"psi_hat hit the search bounds at {hits} grid node(s)", stacklevel=2)
    meta = {"scheme": "crank-nicolson (V form), lagged psi", "n_t": n_t, "n_z": n_z,
            "z_halfwidth": hw, "psi_min": bounds.psi_min, "psi_max": bounds.psi_max}
    return DualGrid(t, z, h, psi_hat, hits, meta)


# ---------------------------------------------------------------------------
# Monte Carlo annuity and the multiplier

def mc_dual_value(p: MarketParams, pref: PreferenceSpec, m: MortalityCurve, psi_policy,
                  grid: TimeGrid, n_paths: int, seed: int, coarsen: int = 1,
                  block_size: int = DEFAULT_BLOCK, threads: int = 1) -> tuple[float, float]:
    """Feynman-Kac estimate of the annuity H(psi) with Z under the dual measure.

    Increments are drawn on ``grid`` and summed in groups of ``coarsen`` so
    that runs at different step sizes share random numbers.  The discount
    exponent and the running annuity are integrated by the trapezoid rule.
    """
    if grid.n_steps % coarsen:
        raise ValueError("coarsen must divide n_steps")
    n = grid.n_steps // coarsen
    dt = grid.dt * coarsen
    times = np.linspace(0.0, grid.T, n + 1)
    d = pref.delta

    def rate(t, z):
        psi = np.broadcast_to(psi_policy(t, z), z.shape)
        return total_rate(p, pref, m, t, z, psi), psi

    def run(block, start, stop):
        rng = generator(seed, "dual_mc", block)
        dw1, _ = draw_brownian(rng, grid.n_steps, block_size, grid.dt, 0.0)
        if coarsen > 1:
            dw1 = dw1.reshape(n, coarsen, block_size).sum(axis=1)
        z = np.full(block_size, p.z0)
        R, psi = rate(0.0, z)
        L = np.zeros(block_size)
        f = (1.0 + m.mu(0.0)) * np.ones(block_size)
        acc = np.zeros(block_size)
        for k in range(n):
            nu, _ = risk_prices(p, times[k], z, psi)
            z = z + (p.eta(times[k], z) - d / (1.0 - d) * nu) * dt + dw1[k]
            R_new, psi = rate(times[k + 1], z)
            L = L + 0.5 * (R + R_new) * dt
            f_new = (1.0 + m.mu(times[k + 1])) * np.exp(-L)
            acc += 0.5 * (f + f_new) * dt
            R, f = R_new, f_new
        return (acc + np.exp(-L))[: stop - start]

    vals = np.concatenate(map_blocks(run, n_paths, block_size, threads))
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()), se


def dual_functional(zeta, H: float, y0: float, delta: float):
    """Psi(zeta) = (1-delta)/delta * zeta^q * H + zeta * y0."""
    q = -delta / (1.0 - delta)
    return (1.0 - delta) / delta * np.asarray(zeta, dtype=float) ** q * H + np.asarray(zeta) * y0


def optimal_zeta(x0: float, g0: float, H: float, delta: float) -> tuple[float, float]:
    """Optimal multiplier and the dual value at it."""
    y0 = x0 + g0
    if y0 <= 0:
        raise ValueError("x0 + g0 must be positive")
    if H <= 0:
        raise ValueError("annuity factor must be positive")
    zeta = (y0 / H) ** (delta - 1.0)
    return float(zeta), float(y0 ** delta * H ** (1.0 - delta) / delta)


@dataclass
class DualSolution:
    grid: DualGrid
    zeta_hat: float
    dual_value: float
    H0: float
    x0: float
    g0: float

    @property
    def y0(self) -> float:
        return self.x0 + self.g0

    def annuity(self, t, z):
        return self.grid.interp("V", t, z)

    def psi(self, t, z):
        return self.grid.interp("psi_hat", t, z)


def annuity_factor(dual: DualSolution | DualGrid, t, z):
    """H(t, z) = exp(-h(t, z)); equals 1 at the horizon."""
    g = dual.grid if isinstance(dual, DualSolution) else dual
    return g.interp("V", t, z)


def solve_dual(model: Model, n_t: int = 200, n_z: int = 200, bounds: PsiBounds = PsiBounds(),
               z_halfwidth: float | None = None) -> DualSolution:
    p, m = model.market, model.mortality
    grid = solve_pde(p, model.prefs, m, n_t, n_z, bounds, z_halfwidth)
    H0 = grid.value_at(0.0, p.z0)
    g0 = human_capital(p, m, model.income, 0.0)
    zeta, val = optimal_zeta(p.x0, g0, H0, model.delta)
    return DualSolution(grid, zeta, val, H0, p.x0, g0)
