import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import desk_model
from lifecycle_obpi.american_put import (GuaranteeSpec, boundary_violations, build_context,
                                         exercise_boundary, fit_regression, generator_residual,
                                         guarantee_curves, lsm_price)
from lifecycle_obpi.checks import deterministic_curves, deterministic_model, deterministic_put_dp
from lifecycle_obpi.coefficients import Constant
from lifecycle_obpi.dual import solve_dual
from lifecycle_obpi.market import TimeGrid

SPEC = GuaranteeSpec("rate_guarantee", Constant(0.0), 0.8)


@pytest.fixture(scope="module")
def ctx(model, dual):
    return build_context(model, dual, SPEC, TimeGrid(10.0, 200), 20000, 31, exercise_every=4)


@settings(max_examples=25, deadline=None)
@given(coef=st.lists(st.floats(-3, 3), min_size=10, max_size=10))
def test_regression_reproduces_cubic_polynomials(coef):
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=500), rng.normal(size=500)
    target = (coef[0] + coef[1] * x + coef[2] * y + coef[3] * x * x + coef[4] * x * y + coef[5] * y * y
              + coef[6] * x ** 3 + coef[7] * x * x * y + coef[8] * x * y * y + coef[9] * y ** 3)
    fit, fitted = fit_regression([x, y, np.full(500, 2.0)], target, 3)
    assert fit.active == (0, 1)
    assert np.allclose(fitted, target, atol=1e-8 * (1 + np.abs(target).max()))
    assert np.allclose(fit.predict([x[:5], y[:5], 2.0]), target[:5], atol=1e-8 * (1 + np.abs(target).max()))


def test_rank_deficient_design_lowers_degree():
    x = np.repeat([0.0, 1.0], 50)
    with pytest.warns(UserWarning, match="rank-deficient"):
        fit, _ = fit_regression([x, np.zeros(100), np.zeros(100)], x, 3)
    assert fit.exponents.max() < 3


def test_guarantee_curves_closed_form(model):
    times = np.linspace(0, 10, 11)
    c = guarantee_curves(SPEC, model, times)
    assert np.allclose(c.growth, np.exp(0.01 * times), rtol=1e-12)
    assert np.allclose(c.income_accrual, (1 - np.exp(-0.01 * times)) / 0.01, rtol=1e-10)
    assert np.allclose(c.disc, np.exp(-0.04 * times), rtol=1e-12)


def test_guaranteed_rate_above_r_rejected(model, dual):
    with pytest.raises(ValueError, match="r_g"):
        build_context(model, dual, GuaranteeSpec("rate_guarantee", Constant(0.05), 1.0), TimeGrid(10, 10), 10, 1, 5)


def test_lsm_sanity(ctx, dual):
    for scale in (0.6, 1.0):
        q = lsm_price(ctx, scale * dual.y0)
        assert q.price >= q.intrinsic0 - 3 * q.se
        assert q.price >= q.european - 3 * (q.se + q.european_se)


def test_price_nonincreasing_in_portfolio_value(ctx, dual):
    prices = [lsm_price(ctx, s * dual.y0, keep_paths=False).price for s in (0.55, 0.6, 0.65, 0.7)]
    assert all(a >= b for a, b in zip(prices, prices[1:]))


def test_exercise_boundary_below_cap(ctx, dual):
    q = lsm_price(ctx, 0.6 * dual.y0)
    est = exercise_boundary(q)
    assert not est.empty
    assert boundary_violations(q, est) == 0
    # bins with no exercise read as zero
    j = int(np.argmax(np.all(np.isnan(est.b), axis=1))) if np.any(np.all(np.isnan(est.b), axis=1)) else None
    if j is not None:
        assert np.all(est.lookup(est.times[j], np.array([0.0, 1.0])) == 0.0)


def test_deterministic_market_matches_dynamic_programming(model):
    dm = deterministic_model(model)
    dd = solve_dual(dm, 100, 20)
    spec = GuaranteeSpec("zero")
    dctx = build_context(dm, dd, spec, TimeGrid(10.0, 2000), 8, 1, exercise_every=20)
    curves = deterministic_curves(dm, dd, spec, dctx.times)
    for y in (6.5, 7.5, 8.5):
        dp, when = deterministic_put_dp(curves, spec, dm.market.x0, y)
        assert when > 0  # interior exercise date, so the comparison is not trivial
        assert lsm_price(dctx, y).price == pytest.approx(dp, abs=1e-6)


def test_deterministic_curves_against_discretised_paths(model):
    dm = deterministic_model(model)
    dd = solve_dual(dm, 50, 10)
    spec = GuaranteeSpec("rate_guarantee", Constant(0.01), 1.0)
    errs = []
    for n in (200, 400):
        ctx = build_context(dm, dd, spec, TimeGrid(10.0, n), 2, 1, exercise_every=n // 10)
        curves = deterministic_curves(dm, dd, spec, ctx.times)
        errs.append(np.max(np.abs(ctx.unit.m[:, 0] - curves.m)))
    assert errs[1] < errs[0] / 3.5  # second order


def test_generator_of_deterministic_discount_vanishes(model, dual):
    phi = lambda t, y, z, d: 3.0 * np.exp(-0.04 * (10.0 - t))
    assert abs(generator_residual(model, dual, phi, 4.0, 12.0, 0.0)) < 1e-6


def test_generator_of_wealth_is_minus_consumption(model, dual):
    res = generator_residual(model, dual, lambda t, y, z, d: y, 4.0, 12.0, 0.0)
    assert res == pytest.approx(-1.01 * 12.0 / float(dual.annuity(4.0, 0.0)), rel=1e-6)


def test_generator_stencil_checks(model, dual):
    with pytest.raises(ValueError):
        generator_residual(model, dual, lambda t, y, z, d: y, 0.0, 12.0, 0.0)
