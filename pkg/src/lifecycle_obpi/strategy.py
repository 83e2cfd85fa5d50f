"""Unrestricted optimal strategy and optimal wealth Y* = X* + g.

Optimal consumption and insurance are both Y*/H(t), so every quantity is
linear in the initial total wealth y0.  The simulator therefore produces
"unit" paths M = Y*/y0 and scales them afterwards; the same paths serve any
y0, including per-path dispersed starting values used by the put pricer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dual import DualSolution
from .market import Model, TimeGrid, human_capital_grid, step_integrals, warn_if_correlated
from .measure import risk_prices
from .rng import DEFAULT_BLOCK, generator, map_blocks


class SingularAllocationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# pointwise strategy

def optimal_consumption_insurance(dual: DualSolution, y_t, t, z=None):
    """(c*, p*) = (y/H(t, z), y/H(t, z)); the two are the same array."""
    z = dual.grid.z[len(dual.grid.z) // 2] if z is None else z
    H = dual.annuity(t, z)
    if np.any(np.asarray(H) <= 0):
        raise ValueError("annuity factor must be positive")
    c = np.asarray(y_t, dtype=float) / H
    return c, c


def jump_factor(psi, delta: float):
    """Relative size psi^(-1/(1-delta)) of Y* after a jump."""
    return np.asarray(psi, dtype=float) ** (-1.0 / (1.0 - delta))


def allocation_fraction(model: Model, dual: DualSolution, t, z):
    """pi*/y, using the summed-numerator allocation rule."""
    p, d = model.market, model.delta
    psi = dual.psi(t, z)
    nu, th = risk_prices(p, t, z, psi)
    denom = p.beta(t, z) + p.sigma(t, z) + p.gamma(t, z)
    if np.any(denom == 0.0):
        raise SingularAllocationError(
            f"beta + sigma + gamma = 0 at t={t}: beta={p.beta(t, z)}, sigma={p.sigma(t, z)}, gamma={p.gamma(t, z)}")
    return ((jump_factor(psi, d) - 1.0) - nu / (1.0 - d) - th / (1.0 - d)) / denom


def optimal_allocation(model: Model, dual: DualSolution, y_t, t, z):
    return allocation_fraction(model, dual, t, z) * np.asarray(y_t, dtype=float)


def allocation_residuals(model: Model, dual: DualSolution, y_t, t, z, pi):
    """Residuals of the three first-order conditions for pi; generally not all zero."""
    p, d = model.market, model.delta
    psi = dual.psi(t, z)
    nu, th = risk_prices(p, t, z, psi)
    y = np.asarray(y_t, dtype=float)
    res1 = pi * p.beta(t, z) + nu * y / (1.0 - d)
    res2 = pi * p.sigma(t, z) + th * y / (1.0 - d)
    res3 = pi * p.gamma(t, z) - (jump_factor(psi, d) - 1.0) * y
    return res1, res2, res3


# ---------------------------------------------------------------------------
# path simulation

@dataclass
class UnitPaths:
    """Unit-scale optimal wealth paths on a recording sub-grid.

    ``m`` is Y*/y0.  ``b`` is the running integral of
    exp(-int (r_g + mu)) (1 + mu) M / H, from which the guarantee accrual of
    a run with initial wealth y0 follows as A(t) - y0 * b(t).
    Path-level accumulators (all per unit y0 except ``primal``, which is per
    unit y0^delta) are computed on the fine grid.
    """

    times: np.ndarray  # recorded times
    record_index: np.ndarray  # indices of the recorded times on the fine grid
    m: np.ndarray  # (n_rec, n)
    z: np.ndarray
    b: Optional[np.ndarray]
    disc_terminal: np.ndarray  # exp(-int_0^T (r+mu)) M(T)
    disc_consumption: np.ndarray  # int_0^T exp(-int (r+mu)) (1+mu) M / H
    disc_mid: np.ndarray  # discounted M at the mid recorded time
    disc_consumption_mid: np.ndarray
    mid_time: float
    primal: Optional[np.ndarray]
    measure: str
    n_jumps_total: np.ndarray = field(default=None)
    cons: Optional[np.ndarray] = None  # (n_rec, n) running discounted consumption, when recorded


def simulate_unit_paths(model: Model, dual: DualSolution, grid: TimeGrid, n_paths: int, seed: int,
                        measure: str = "Q", record_every: int = 1, stream: str = "wealth",
                        accrual_rate: Callable | None = None, block_size: int = DEFAULT_BLOCK,
                        threads: int = 1, record_consumption: bool = False) -> UnitPaths:
    """Simulate M = Y*/y0 with a log-Euler step and exact jump factors.

    Under Q the Brownian draws are Q-increments and jumps arrive at rate
    psi_hat*lambda.  Under P the draws are P-increments, the Girsanov drift
    nu enters the loadings and jumps arrive at rate lambda; the primal
    objective is accumulated as well.
    """
    if measure not in ("P", "Q"):
        raise ValueError("measure must be 'P' or 'Q'")
    if grid.n_steps % record_every:
        raise ValueError("record_every must divide n_steps")
    p, m_curve, pref = model.market, model.mortality, model.prefs
    warn_if_correlated(p, "simulate_unit_paths")
    d = model.delta
    times, dt = grid.times, grid.dt
    n = grid.n_steps
    rec = np.arange(0, n + 1, record_every)
    mid_k = rec[len(rec) // 2]
    lam_int = step_integrals(p.lam, times)
    rate_int = step_integrals(lambda t: p.r(t) + m_curve.mu(t), times)
    log_disc = np.concatenate([[0.0], np.cumsum(rate_int)])
    one_mu = 1.0 + m_curve.mu(times)
    if accrual_rate is not None:
        acc_int = step_integrals(lambda t: accrual_rate(t) + m_curve.mu(t), times)
        log_acc = np.concatenate([[0.0], np.cumsum(acc_int)])
    if measure == "P":
        util_int = step_integrals(lambda t: pref.rho(t) + m_curve.mu(t), times)
        log_util = np.concatenate([[0.0], np.cumsum(util_int)])
        kap = pref.kappa

    def run(block, start, stop):
        rng = generator(seed, stream, block)
        e = rng.standard_normal((n, 2, block_size)) * np.sqrt(dt)
        w = stop - start
        z = np.full(block_size, p.z0)
        logm = np.zeros(block_size)
        out_m = np.empty((len(rec), w))
        out_z = np.empty((len(rec), w))
        out_b = np.empty((len(rec), w)) if accrual_rate is not None else None
        out_c = np.empty((len(rec), w)) if record_consumption else None
        H = dual.annuity(times[0], z)
        flow = one_mu[0] / H  # (1 + mu)/H per unit M
        cons = np.zeros(block_size)
        bacc = np.zeros(block_size)
        primal = np.zeros(block_size) if measure == "P" else None
        if measure == "P":
            prim_f = np.exp(-log_util[0]) * one_mu[0] * np.exp(-kap * times[0]) * (flow / one_mu[0]) ** d / d
        cons_mid = disc_mid = None
        jumps_total = np.zeros(block_size, dtype=np.int64)
        j = 0
        for k in range(n + 1):
            if j < len(rec) and k == rec[j]:
                out_m[j] = np.exp(logm[:w])
                out_z[j] = z[:w]
                if out_b is not None:
                    out_b[j] = bacc[:w]
                if out_c is not None:
                    out_c[j] = cons[:w]
                j += 1
            if k == mid_k:
                disc_mid = np.exp(logm - log_disc[k])
                cons_mid = cons.copy()
            if k == n:
                break
            t = times[k]
            psi = np.broadcast_to(dual.psi(t, z), z.shape)
            nu, th = risk_prices(p, t, z, psi)
            a1, a2 = -nu / (1.0 - d), -th / (1.0 - d)
            J = jump_factor(psi, d)
            dw1, dw2 = e[k, 0], e[k, 1]
            if measure == "Q":
                nj = rng.poisson(psi * lam_int[k])
                z_new = z + (p.eta(t, z) + nu) * dt + dw1
                girs = 0.0
            else:
                nj = rng.poisson(lam_int[k] * np.ones(block_size))
                z_new = z + p.eta(t, z) * dt + dw1
                girs = -(a1 * nu + a2 * th) * dt  # dW^Q = dW - nu dt
            H_new = dual.annuity(times[k + 1], z_new)
            flow_new = one_mu[k + 1] / H_new
            logm_new = (logm + rate_int[k] - 0.5 * (flow + flow_new) * dt
                        - 0.5 * (a1 * a1 + a2 * a2) * dt - (J - 1.0) * psi * lam_int[k]
                        + girs + a1 * dw1 + a2 * dw2 + np.log(J) * nj)
            if not np.all(np.isfinite(logm_new)):
                raise FloatingPointError(f"non-finite wealth at step {k}")
            # trapezoid for the discounted consumption-plus-premium stream
            m_old, m_new = np.exp(logm), np.exp(logm_new)
            cons += 0.5 * dt * (np.exp(-log_disc[k]) * flow * m_old + np.exp(-log_disc[k + 1]) * flow_new * m_new)
            if accrual_rate is not None:
                bacc += 0.5 * dt * (np.exp(-log_acc[k]) * flow * m_old + np.exp(-log_acc[k + 1]) * flow_new * m_new)
            if measure == "P":
                prim_new = (np.exp(-log_util[k + 1]) * one_mu[k + 1] * np.exp(-kap * times[k + 1])
                            * (flow_new / one_mu[k + 1] * m_new) ** d / d)
                primal += 0.5 * dt * (prim_f + prim_new)
                prim_f = prim_new
            jumps_total += nj
            logm, z, flow = logm_new, z_new, flow_new
        mT = np.exp(logm)
        if measure == "P":
            primal += np.exp(-log_util[n]) * np.exp(-kap * times[n]) * mT ** d / d
        sl = slice(0, w)
        return (out_m, out_z, out_b, (np.exp(-log_disc[n]) * mT)[sl], cons[sl], disc_mid[sl],
                cons_mid[sl], None if primal is None else primal[sl], jumps_total[sl], out_c)

    parts = map_blocks(run, n_paths, block_size, threads)

    def cat(i, axis=0):
        return None if parts[0][i] is None else np.concatenate([q[i] for q in parts], axis=axis)

    return UnitPaths(times[rec], rec, cat(0, 1), cat(1, 1), cat(2, 1), cat(3), cat(4), cat(5), cat(6),
                     float(times[mid_k]), cat(7), measure, cat(8), cat(9, 1))


@dataclass
class WealthRun:
    """Optimal wealth for a given y0 together with strategy evaluators."""

    model: Model
    dual: DualSolution
    unit: UnitPaths
    y0: float
    g: np.ndarray  # human capital on the recorded times

    @property
    def times(self) -> np.ndarray:
        return self.unit.times

    @property
    def y(self) -> np.ndarray:
        return self.y0 * self.unit.m

    @property
    def x(self) -> np.ndarray:
        return self.y - self.g[:, None]

    def consumption_insurance(self):
        return optimal_consumption_insurance(self.dual, self.y, self.times[:, None], self.unit.z)

    def allocation(self):
        return optimal_allocation(self.model, self.dual, self.y, self.times[:, None], self.unit.z)


def simulate_unrestricted_wealth(model: Model, dual: DualSolution, grid: TimeGrid, n_paths: int,
                                 seed: int, measure: str = "Q", record_every: int = 1,
                                 block_size: int = DEFAULT_BLOCK, threads: int = 1) -> WealthRun:
    unit = simulate_unit_paths(model, dual, grid, n_paths, seed, measure, record_every,
                               block_size=block_size, threads=threads)
    g = human_capital_grid(model.market, model.mortality, model.income, unit.times)
    return WealthRun(model, dual, unit, dual.y0, g)


# ---------------------------------------------------------------------------
# identities

@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float
    gap: float
    se: float

    @property
    def z_score(self) -> float:
        return self.gap / self.se if self.se > 0 else (0.0 if self.gap == 0 else np.inf)

    def passes(self, n_se: float = 3.0) -> bool:
        return abs(self.gap) <= n_se * self.se


def _stats(samples, rhs) -> IdentityCheck:
    s = np.asarray(samples, dtype=float)
    mean = float(s.mean())
    se = float(s.std(ddof=1) / np.sqrt(s.size))
    return IdentityCheck(mean, float(rhs), mean - float(rhs), se)


def _discount(model: Model, t: float) -> float:
    p, m_curve = model.market, model.mortality
    fine = np.linspace(0.0, t, 2001)
    return float(np.exp(-np.sum(step_integrals(lambda s: p.r(s) + m_curve.mu(s), fine))))


def budget_check(run: WealthRun) -> IdentityCheck:
    """E^Q[int e^{-int(r+mu)} (c + mu p) dt + e^{-int(r+mu)} X(T)] against x0 + g(0)."""
    if run.unit.measure != "Q":
        raise ValueError("budget_check needs paths simulated under Q")
    u = run.unit
    x_T = run.y0 * u.disc_terminal - _discount(run.model, run.times[-1]) * run.g[-1]
    lhs = run.y0 * u.disc_consumption + x_T
    return _stats(lhs, run.dual.x0 + run.dual.g0)


def martingale_identity(run: WealthRun, at: str = "T") -> IdentityCheck:
    """E^Q[e^{-int_0^t(r+mu)} X(t) + int_0^t e^{-int(r+mu)}(c + mu p - l)] against x0.

    ``at`` is "T" or "mid" (the middle recorded time).  The income leg is
    deterministic: int_0^t e^{-int(r+mu)} l = g(0) - e^{-int_0^t(r+mu)} g(t).
    """
    if run.unit.measure != "Q":
        raise ValueError("martingale_identity needs paths simulated under Q")
    u = run.unit
    if at == "T":
        t, disc_y, cons, g_t = run.times[-1], u.disc_terminal, u.disc_consumption, run.g[-1]
    elif at == "mid":
        t, disc_y, cons = u.mid_time, u.disc_mid, u.disc_consumption_mid
        g_t = float(np.interp(t, run.times, run.g))
    else:
        raise ValueError("at must be 'T' or 'mid'")
    disc_t = _discount(run.model, t)
    disc_x = run.y0 * disc_y - disc_t * g_t
    income = run.dual.g0 - disc_t * g_t
    return _stats(disc_x + run.y0 * cons - income, run.dual.x0)


def primal_objective(run: WealthRun) -> IdentityCheck:
    """Monte Carlo primal objective under P, compared with the dual value."""
    if run.unit.measure != "P":
        raise ValueError("the primal objective is an expectation under P")
    return _stats(run.y0 ** run.model.delta * run.unit.primal, run.dual.dual_value)
