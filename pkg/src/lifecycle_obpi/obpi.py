"""American-put based portfolio insurance on the optimal portfolio.

The restricted strategy holds a fraction rho of the unrestricted optimum
plus the American put on rho*Y* struck at k + g.  The initial fraction
solves the budget equation

    rho0 * Y*(0) + P(0; rho0 * Y*(0)) - g(0) = x0,

and rho is ratcheted up whenever the portfolio would otherwise enter the
put's exercise region: rho(t) = max(rho(t-), b(t, D(t)) / Y*(t)).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .american_put import (PricingContext, PutQuote, exercise_boundary, guarantee_curves,
                           guarantee_level, lsm_price)
from .dual import DualSolution
from .market import Model, TimeGrid
from .rng import DEFAULT_BLOCK, generator
from .strategy import (IdentityCheck, _stats, optimal_allocation, optimal_consumption_insurance,
                       simulate_unit_paths)


class InfeasibleGuarantee(ValueError):
    """The floor costs more than the initial wealth at every admissible fraction."""


# ---------------------------------------------------------------------------
# ratchet

@dataclass
class RatchetState:
    rho: float
    running_sup: float = 0.0
    history: list = field(default_factory=list)  # (t, old, new)


def ratchet_fraction(state: RatchetState, t: float, b_t: float, y_star_t: float) -> RatchetState:
    """rho <- max(rho, b/Y*); an event is logged whenever rho increases."""
    if y_star_t <= 0:
        raise ValueError("Y* must be positive")
    ratio = b_t / y_star_t
    sup = max(state.running_sup, ratio)
    new = max(state.rho, ratio)
    hist = list(state.history)
    if new > state.rho:
        hist.append((t, state.rho, new))
    return RatchetState(new, sup, hist)


def restricted_strategy(model: Model, dual: DualSolution, rho, y_star, t, z):
    """(c_hat, pi_hat, p_hat) = rho * (c*, pi*, p*)."""
    c, p = optimal_consumption_insurance(dual, y_star, t, z)
    pi = optimal_allocation(model, dual, y_star, t, z)
    return rho * c, rho * pi, rho * p


# ---------------------------------------------------------------------------
# initial fraction

@dataclass
class FractionSolution:
    rho0: float
    gap: float
    quote: PutQuote  # quote whose value fits and exercise flags drive the forward pass
    passes: list  # (lo, hi, root) per dispersion pass
    mode: str


def _bisect(F, lo: float, hi: float, tol: float, max_iter: int = 200) -> tuple[float, float]:
    f_lo, f_hi = F(lo), F(hi)
    if f_hi == 0.0:
        return hi, 0.0
    if f_lo == 0.0:
        return lo, 0.0
    if np.sign(f_lo) == np.sign(f_hi):
        raise InfeasibleGuarantee(
            f"budget equation has no sign change on [{lo:.6g}, {hi:.6g}] (F={f_lo:.6g}, {f_hi:.6g})")
    mid, f_mid = hi, f_hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = F(mid)
        if abs(f_mid) <= tol or hi - lo < 1e-15:
            break
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return mid, f_mid


def solve_initial_fraction(ctx: PricingContext, x0: float, g0: float, y0: float, tol: float = 1e-8,
                           rho_lo: float = 1e-3, mode: str = "regression", seed: int = 0,
                           narrow_width: float = 0.1) -> FractionSolution:
    """Bisection for the budget equation in rho on (rho_lo, 1].

    ``mode="regression"`` prices once on paths whose starting scale is
    dispersed over the search interval and regresses the t=0 discounted
    payoff on the scale, giving a smooth price curve for the bisection.  A
    second pass narrows the dispersion around the first root and is widened
    until its fit brackets a sign change; direct valuation is the last resort.
    ``mode="direct"`` re-prices at every bisection point instead.
    """
    def F_of(price_fn):
        return lambda r: r * y0 + price_fn(r * y0) - g0 - x0

    if mode == "direct":
        quotes = {}

        def price(y):
            quotes[y] = lsm_price(ctx, y, keep_paths=False)
            return quotes[y].price

        F = F_of(price)
        if F(1.0) == 0.0:
            return FractionSolution(1.0, 0.0, lsm_price(ctx, y0), [], mode)
        rho0, gap = _bisect(F, rho_lo, 1.0, tol)
        return FractionSolution(rho0, gap, lsm_price(ctx, rho0 * y0), [(rho_lo, 1.0, rho0)], mode)
    if mode != "regression":
        raise ValueError("mode must be 'regression' or 'direct'")

    u = generator(seed, "dispersion", 0).random(ctx.n_paths)

    def direct(y):
        return lsm_price(ctx, y, keep_paths=False).price

    def dispersed(lo, hi):
        q = lsm_price(ctx, y0 * (lo + (hi - lo) * u))
        return q, F_of(q.price_at)

    # first pass: locate the root on the whole interval
    quote, F = dispersed(rho_lo, 1.0)
    if F(1.0) <= tol:
        # a wide cubic fit can undershoot zero at the top of the range; trust it only
        # if a direct valuation at full scale agrees that the put is worthless there
        if direct(y0) <= tol:
            return FractionSolution(1.0, F(1.0), quote, [(rho_lo, 1.0, 1.0)], mode)
        rho0, _ = _bisect(F_of(direct), rho_lo, 1.0, tol, max_iter=int(np.ceil(np.log2(4.0 / narrow_width))))
    else:
        rho0, _ = _bisect(F, rho_lo, 1.0, tol)
    passes = [(rho_lo, 1.0, rho0)]

    # second pass: narrow the dispersion around that root, widening until the fit brackets it
    width = narrow_width
    while True:
        lo, hi = max(rho_lo, rho0 - width / 2), min(1.0, rho0 + width / 2)
        quote, F = dispersed(lo, hi)
        try:
            root, gap = _bisect(F, lo, hi, tol)
        except InfeasibleGuarantee:
            if lo > rho_lo or hi < 1.0:
                width *= 2
                continue
            root, gap = _bisect(F_of(direct), rho_lo, 1.0, tol)
            passes.append((rho_lo, 1.0, root))
            return FractionSolution(root, gap, lsm_price(ctx, root * y0), passes, mode)
        passes.append((lo, hi, root))
        return FractionSolution(root, gap, quote, passes, mode)


# ---------------------------------------------------------------------------
# forward pass

@dataclass
class RestrictedRun:
    times: np.ndarray
    y_star: np.ndarray  # (n_dates, n)
    z: np.ndarray
    rho: np.ndarray
    put: np.ndarray
    x_hat: np.ndarray
    k: np.ndarray
    d: np.ndarray
    g: np.ndarray
    tol: float
    rho0: float
    x_hat0: float
    clip_events: int
    ratchet_events: int
    martingale: IdentityCheck
    in_stopping_region: np.ndarray  # (n_dates, n) intrinsic >= fitted continuation

    @property
    def violations(self) -> np.ndarray:
        return self.x_hat < self.k - self.tol


def regression_boundary(quote: PutQuote, j: int, z, d, n_iter: int = 60) -> np.ndarray:
    """Exercise boundary of the LSM rule at date j evaluated at each path's own (z, D).

    Returns the largest y in [0, k + g] with intrinsic(y) >= fitted
    continuation(y), found by bisection assuming a single crossing; 0 when
    the rule never exercises there.
    """
    z = np.asarray(z, dtype=float)
    d = np.asarray(d, dtype=float)
    fit = quote.value_fits[j] if j < len(quote.times) - 1 else None
    hi = guarantee_level(quote.spec, quote.x0, quote.curves.growth[j], d) + quote.curves.g[j]
    hi = np.maximum(hi, 0.0)
    if fit is None:
        return hi  # at maturity any in-the-money portfolio is exercised

    def G(y):
        return (hi - y) - fit.predict([y, z, d])

    lo = np.zeros_like(hi)
    out = np.where(G(hi) >= 0, hi, 0.0)
    live = (G(lo) >= 0) & (out == 0.0)
    a, b = lo[live], hi[live]
    zl, dl, hl = z[live], d[live], hi[live]
    for _ in range(n_iter):
        mid = 0.5 * (a + b)
        ok = (hl - mid) - fit.predict([mid, zl, dl]) >= 0
        a = np.where(ok, mid, a)
        b = np.where(ok, b, mid)
    out[live] = a
    return out


def obpi_wealth(model: Model, dual: DualSolution, fraction: FractionSolution, grid: TimeGrid,
                n_paths: int, seed: int, exercise_every: int, d_bins: int = 20,
                tol: float | None = None, put_bias: float = 0.0, block_size: int = DEFAULT_BLOCK,
                threads: int = 1, boundary_rule: str = "regression") -> RestrictedRun:
    """Run the restricted strategy on fresh Q-paths.

    Puts are valued along each path from the pricing regression (no nested
    simulation); ``put_bias`` subtracts a constant from every put value and
    exists only for fault-injection tests.

    ``boundary_rule="regression"`` ratchets on the boundary of the fitted
    exercise rule at each path's state (:func:`regression_boundary`);
    ``"bins"`` uses the binned estimate from :func:`exercise_boundary`,
    whose per-bin maximum overstates the boundary and so lets the ratchet
    create value.
    """
    if boundary_rule not in ("regression", "bins"):
        raise ValueError("boundary_rule must be 'regression' or 'bins'")
    quote = fraction.quote
    spec = quote.spec
    x0 = model.market.x0
    boundary = None
    if boundary_rule == "bins":
        boundary = quote.boundary or exercise_boundary(quote, d_bins)
    unit = simulate_unit_paths(model, dual, grid, n_paths, seed, "Q", exercise_every, "obpi",
                               accrual_rate=spec.r_g, block_size=block_size, threads=threads,
                               record_consumption=True)
    curves = guarantee_curves(spec, model, unit.times)
    if not np.allclose(curves.times, quote.times):
        raise ValueError("the restricted run must use the pricing exercise dates")
    y0 = dual.y0
    tol = 3.0 * quote.se + 1e-10 if tol is None else tol
    nd, n = unit.m.shape
    ys = y0 * unit.m
    rho = np.empty((nd, n))
    d = np.empty((nd, n))
    put = np.empty((nd, n))
    stop = np.zeros((nd, n), dtype=bool)
    rho[0] = fraction.rho0
    d[0] = 0.0
    clips = ratchets = 0
    for j in range(nd):
        if j > 0:
            d[j] = d[j - 1] + (curves.income_accrual[j] - curves.income_accrual[j - 1]) \
                - rho[j - 1] * y0 * (unit.b[j] - unit.b[j - 1])
            if boundary_rule == "bins":
                target = boundary.lookup(curves.times[j], d[j]) / ys[j]
            else:
                # only paths already inside the exercise region can be ratcheted up
                target = np.zeros(n)
                inside = quote.intrinsic(j, rho[j - 1] * ys[j], d[j]) > 0
                if j < nd - 1 and quote.value_fits[j] is not None:
                    held = rho[j - 1, inside] * ys[j, inside]
                    cont = quote.value_fits[j].predict([held, unit.z[j, inside], d[j, inside]])
                    sub = quote.intrinsic(j, held, d[j, inside]) >= cont
                    idx = np.flatnonzero(inside)[sub]
                else:
                    idx = np.flatnonzero(inside)
                target[idx] = regression_boundary(quote, j, unit.z[j, idx], d[j, idx]) / ys[j, idx]
            new = np.maximum(rho[j - 1], target)
            ratchets += int(np.count_nonzero(new > rho[j - 1]))
            over = new > 1.0
            clips += int(np.count_nonzero(over))
            rho[j] = np.minimum(new, 1.0)
        held = rho[j] * ys[j]
        if j == 0:
            put[0] = quote.price_at(held[0])
        else:
            put[j] = quote.value(j, held, unit.z[j], d[j])
            if j < nd - 1 and quote.value_fits[j] is not None:
                cont = quote.value_fits[j].predict([held, unit.z[j], d[j]])
                stop[j] = quote.intrinsic(j, held, d[j]) >= cont
            elif j == nd - 1:
                stop[j] = quote.intrinsic(j, held, d[j]) > 0
        put[j] -= put_bias
    if clips:
        warnings.warn(f"ratchet fraction clipped to 1 at {clips} path-date(s)", stacklevel=2)
    k = guarantee_level(spec, x0, curves.growth[:, None], d)
    x_hat = rho * ys + put - curves.g[:, None]

    # discounted wealth plus discounted net withdrawals, with rho piecewise constant between dates
    cons = np.sum(rho[:-1] * y0 * np.diff(unit.cons, axis=0), axis=0)
    samples = curves.disc[-1] * x_hat[-1] + cons - dual.g0
    mart = _stats(samples, x0)
    return RestrictedRun(curves.times, ys, unit.z, rho, put, x_hat, k, d, curves.g, tol, fraction.rho0,
                         float(x_hat[0, 0]), clips, ratchets, mart, stop)


@dataclass(frozen=True)
class AdmissibilityReport:
    floor_violations: int
    paths_with_violations: int
    per_path: np.ndarray
    martingale: IdentityCheck
    x_hat0_gap: float

    @property
    def supermartingale(self) -> bool:
        """Discounted wealth plus withdrawals may drift down, never up, beyond 3 SE.

        Inside the exercise region the wealth sits on the floor, which grows
        at r_g <= r, so the identity only holds with equality when r_g = r.
        """
        m = self.martingale
        return m.lhs <= m.rhs + 3.0 * m.se

    @property
    def ok(self) -> bool:
        return self.floor_violations == 0 and self.supermartingale


def admissibility_check(run: RestrictedRun, x0: float) -> AdmissibilityReport:
    per_path = run.violations.sum(axis=0)
    return AdmissibilityReport(int(per_path.sum()), int(np.count_nonzero(per_path)), per_path,
                               run.martingale, run.x_hat0 - x0)
