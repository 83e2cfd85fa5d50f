import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import desk_market, desk_model
from oracles import human_capital_closed_form
from lifecycle_obpi.coefficients import Affine, Constant
from lifecycle_obpi.market import (MortalityCurve, TimeGrid, constant_policy, human_capital,
                                   human_capital_grid, simulate_asset, simulate_factor, step_integrals,
                                   survival_prob, validate_params)


def test_valid_desk_config_has_no_violations(model):
    assert validate_params(model.market, model.mortality, TimeGrid(10, 100), model.income, model.prefs) == []


def test_jump_size_below_minus_one_flagged(model):
    p = desk_market(gamma=-1.5)
    issues = validate_params(p, model.mortality, TimeGrid(10, 100))
    assert any("gamma" in s for s in issues)


def test_human_capital_matches_closed_form(model):
    times = np.linspace(0, 10, 21)
    g = human_capital_grid(model.market, model.mortality, model.income, times)
    ref = [human_capital_closed_form(0.03, 0.01, 1.0, 10.0, t) for t in times]
    assert np.allclose(g, ref, rtol=1e-10, atol=1e-12)
    assert g[-1] == 0.0 or abs(g[-1]) < 1e-14
    assert float(human_capital(model.market, model.mortality, model.income, 0.0)) == pytest.approx(ref[0], rel=1e-10)


def test_survival_with_time_varying_mortality():
    m = MortalityCurve(Affine(0.01, 0.0, 0.002), 10.0)
    assert float(survival_prob(m, 5.0)) == pytest.approx(np.exp(-(0.05 + 0.001 * 25)), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-1, 1), b=st.floats(-1, 1), n=st.integers(2, 50))
def test_step_integrals_exact_for_affine(a, b, n):
    times = np.linspace(0.0, 3.0, n + 1)
    got = step_integrals(Affine(a, 0.0, b), times).sum()
    assert got == pytest.approx(3 * a + 4.5 * b, abs=1e-12)


def test_factor_mean_under_P():
    p = desk_market(eta=Affine(0.1, 0.0, 0.0))  # constant drift 0.1
    b = simulate_factor(p, TimeGrid(2.0, 50), 20000, 11)
    z_T = b.z[-1]
    assert abs(z_T.mean() - 0.2) < 3 * z_T.std() / np.sqrt(z_T.size)


def test_asset_stays_positive_and_drifts_at_alpha():
    p = desk_market()
    b = simulate_factor(p, TimeGrid(1.0, 100), 40000, 5)
    s = simulate_asset(p, b)
    assert np.all(s > 0)
    s_T = s[-1]
    # E[S_T] = exp((alpha + gamma*lambda) T) under P
    target = np.exp(0.07 - 0.1)
    assert abs(s_T.mean() - target) < 4 * s_T.std() / np.sqrt(s_T.size)


def test_factor_under_Q_shifts_drift_by_nu():
    p = desk_market()
    pol = constant_policy(1.0)
    bq = simulate_factor(p, TimeGrid(1.0, 20), 20000, 3, drift_mode="Q", psi_policy=pol)
    bp = simulate_factor(p, TimeGrid(1.0, 20), 20000, 3, drift_mode="P", psi_policy=pol)
    nu = 0.2 * (0.03 - 0.07 + 0.1) / 0.05
    assert np.allclose(bq.z[-1] - bp.z[-1], nu, atol=1e-12)


def test_jump_counts_are_drawn_per_path():
    b = simulate_factor(desk_market(), TimeGrid(1.0, 50), 5000, 2)
    counts = b.n_jumps.sum(axis=0)
    assert counts.var() > 0.5
    assert abs(counts.mean() - 1.0) < 4 * np.sqrt(1.0 / counts.size)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_reports_step_index():
    p = desk_market(eta=lambda t, z=0.0: np.where(np.abs(z) > 1e100, np.inf, 1e200 * (1 + np.abs(z))))
    with pytest.raises(FloatingPointError, match="step"):
        simulate_factor(p, TimeGrid(1.0, 10), 10, 1)
