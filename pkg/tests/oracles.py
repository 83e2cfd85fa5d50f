"""Closed forms and brute-force references used across the tests."""

import numpy as np


def annuity_closed_form(R: float, mu: float, T: float, t: float = 0.0) -> float:
    """Solution of H' = R H - (1 + mu), H(T) = 1 with constant coefficients."""
    a = (1.0 + mu) / R
    return a + (1.0 - a) * np.exp(-R * (T - t))


def human_capital_closed_form(r: float, mu: float, ell: float, T: float, t: float) -> float:
    k = r + mu
    return ell * (1.0 - np.exp(-k * (T - t))) / k


def brute_force_argmin(f, lo: float, hi: float, n: int = 200001, rounds: int = 4) -> float:
    """Grid search refined around the best node; slow but assumption-free."""
    for _ in range(rounds):
        x = np.linspace(lo, hi, n)
        i = int(np.argmin(f(x)))
        lo, hi = x[max(i - 2, 0)], x[min(i + 2, n - 1)]
    return 0.5 * (lo + hi)


def rk4(f, y0, t0: float, t1: float, n: int):
    y = np.asarray(y0, dtype=float)
    h = (t1 - t0) / n
    t = t0
    for _ in range(n):
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h * k1 / 2)
        k3 = f(t + h / 2, y + h * k2 / 2)
        k4 = f(t + h, y + h * k3)
        y = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        t += h
    return y


def crra_terminal_moment(a1: float, a2: float, drift: float, T: float, power: float) -> float:
    """E[exp(power * X_T)] for X_T Gaussian with the given constant drift and loadings."""
    var = (a1 * a1 + a2 * a2) * T
    return float(np.exp(power * drift * T + 0.5 * power * power * var))
