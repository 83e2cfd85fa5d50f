"""Market prices of risk, Radon-Nikodym densities and the adjusted deflator.

For a jump-measure candidate psi > 0 the Brownian risk prices are

    nu    = beta  / (beta^2 + sigma^2) * (r - alpha - gamma*psi*lambda)
    theta = sigma / (beta^2 + sigma^2) * (r - alpha - gamma*psi*lambda)

and the density process obeys dLambda/Lambda = nu dW1 + theta dW2 + (psi-1)(dN - lambda dt).
Lambda is accumulated in log space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .market import (MarketParams, PathBundle, PreferenceSpec, TimeGrid, constant_policy,
                     draw_brownian, factor_drift, step_integrals, warn_if_correlated)
from .rng import DEFAULT_BLOCK, generator, map_blocks


class SingularMarketError(ValueError):
    pass


def risk_prices(p: MarketParams, t, z, psi=None):
    """Girsanov drifts (nu, theta) for the measure indexed by psi (default 1)."""
    b, s = p.beta(t, z), p.sigma(t, z)
    sig2 = b * b + s * s
    if np.any(sig2 <= 0.0):
        raise SingularMarketError("beta^2 + sigma^2 = 0: market is singular")
    psi = 1.0 if psi is None else psi
    excess = p.r(t) - p.alpha(t, z) - p.gamma(t, z) * psi * p.lam(t)
    return b / sig2 * excess, s / sig2 * excess


def zero_identity(p: MarketParams, t, z, psi) -> np.ndarray:
    """(alpha - r) + beta*nu + sigma*theta + gamma*psi*lambda; vanishes for every psi."""
    nu, th = risk_prices(p, t, z, psi)
    return (p.alpha(t, z) - p.r(t)) + p.beta(t, z) * nu + p.sigma(t, z) * th + p.gamma(t, z) * psi * p.lam(t)


@dataclass
class DeflatorPath:
    log_lambda: np.ndarray  # (n_steps + 1, n)
    log_gamma: np.ndarray
    psi: np.ndarray  # (n_steps, n): left-endpoint psi per step

    @property
    def lambda_path(self) -> np.ndarray:
        return np.exp(self.log_lambda)

    @property
    def gamma_path(self) -> np.ndarray:
        return np.exp(self.log_gamma)


PsiInput = Union[Callable, np.ndarray, float]


def psi_on_steps(bundle: PathBundle, psi: PsiInput) -> np.ndarray:
    """Left-endpoint psi for every step of the bundle, shape (n_steps, n)."""
    n = bundle.grid.n_steps
    if callable(psi):
        times = bundle.grid.times
        out = np.stack([np.broadcast_to(psi(times[k], bundle.z[k]), bundle.z[k].shape) for k in range(n)])
    else:
        arr = np.asarray(psi, dtype=float)
        if arr.ndim == 2 and arr.shape[0] == n + 1:
            arr = arr[:-1]
        out = np.broadcast_to(arr, (n, bundle.n_paths)) if arr.ndim < 2 else arr
    if np.any(out <= 0.0) or not np.all(np.isfinite(out)):
        raise ValueError("psi must be finite and strictly positive along the path")
    return np.asarray(out, dtype=float)


def log_density_increments(p: MarketParams, times: np.ndarray, z: np.ndarray, dw1, dw2, n_jumps,
                           psi: np.ndarray, compensator: float = 0.5) -> np.ndarray:
    """Per-step increments of ln Lambda, shape (n_steps, n).

    ``compensator`` is the coefficient of the (nu^2 + theta^2) dt term; the
    correct value is 1/2.  Any other value exists only as a negative control.
    """
    n = len(times) - 1
    lam_int = step_integrals(p.lam, times)
    out = np.empty(dw1.shape)
    for k in range(n):
        dt = times[k + 1] - times[k]
        nu, th = risk_prices(p, times[k], z[k], psi[k])
        out[k] = ((1.0 - psi[k]) * lam_int[k] - compensator * (nu * nu + th * th) * dt
                  + nu * dw1[k] + th * dw2[k] + np.log(psi[k]) * n_jumps[k])
    return out


def radon_nikodym_path(p: MarketParams, bundle: PathBundle, psi_path: PsiInput,
                       compensator: float = 0.5) -> np.ndarray:
    """ln Lambda at every node of a P-bundle."""
    if bundle.measure != "P":
        raise ValueError("the density is defined on increments drawn under P")
    warn_if_correlated(p, "radon_nikodym_path")
    psi = psi_on_steps(bundle, psi_path)
    inc = log_density_increments(p, bundle.grid.times, bundle.z, bundle.w1, bundle.w2,
                                 bundle.n_jumps, psi, compensator)
    return np.vstack([np.zeros((1, bundle.n_paths)), np.cumsum(inc, axis=0)])


def deflator_path(p: MarketParams, pref: PreferenceSpec, bundle: PathBundle,
                  psi_path: PsiInput) -> DeflatorPath:
    """Gamma = Lambda * exp(int (rho - r)), both in log space."""
    log_l = radon_nikodym_path(p, bundle, psi_path)
    carry = np.concatenate([[0.0], np.cumsum(step_integrals(lambda t: pref.rho(t) - p.r(t),
                                                            bundle.grid.times))])
    return DeflatorPath(log_l, log_l + carry[:, None], psi_on_steps(bundle, psi_path))


def euler_deflator(p: MarketParams, pref: PreferenceSpec, bundle: PathBundle,
                   psi_path: PsiInput) -> np.ndarray:
    """Plain Euler scheme for dGamma = Gamma[(rho - r)dt + nu dW1 + theta dW2 + (psi-1)(dN - lambda dt)].

    Used only to check that the closed form and the SDE describe the same process.
    """
    psi = psi_on_steps(bundle, psi_path)
    times = bundle.grid.times
    g = np.empty_like(bundle.z)
    g[0] = 1.0
    for k in range(bundle.grid.n_steps):
        t, dt = times[k], times[k + 1] - times[k]
        nu, th = risk_prices(p, t, bundle.z[k], psi[k])
        dg = ((pref.rho(t) - p.r(t)) * dt + nu * bundle.w1[k] + th * bundle.w2[k]
              + (psi[k] - 1.0) * (bundle.n_jumps[k] - p.lam(t) * dt))
        g[k + 1] = g[k] * (1.0 + dg)
    return g


def stateprice_gap(p: MarketParams, pref: PreferenceSpec, bundle: PathBundle, psi_path: PsiInput) -> float:
    """Max relative gap between the Euler-integrated SDE and the closed form."""
    closed = deflator_path(p, pref, bundle, psi_path).gamma_path
    return float(np.max(np.abs(euler_deflator(p, pref, bundle, psi_path) / closed - 1.0)))


def martingale_check(samples) -> tuple[float, float, float]:
    """(mean, standard error, z-score against 1) of terminal density samples."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    mean = float(x.mean())
    se = float(x.std(ddof=1) / np.sqrt(x.size))
    if se == 0.0:
        return mean, 0.0, 0.0 if mean == 1.0 else float(np.copysign(np.inf, mean - 1.0))
    return mean, se, (mean - 1.0) / se


def terminal_density_samples(p: MarketParams, grid: TimeGrid, n_paths: int, seed: int,
                             psi_policy=None, block_size: int = DEFAULT_BLOCK, threads: int = 1,
                             compensator: float = 0.5) -> np.ndarray:
    """Lambda(T) over n_paths P-paths, simulated block by block to bound memory."""
    psi_policy = psi_policy or constant_policy(1.0)
    warn_if_correlated(p, "terminal_density_samples")
    times = grid.times
    lam_int = step_integrals(p.lam, times)

    def run(block, start, stop):
        rng = generator(seed, "girsanov", block)
        dw1, dw2 = draw_brownian(rng, grid.n_steps, block_size, grid.dt, p.corr)
        z = np.full(block_size, p.z0)
        log_l = np.zeros(block_size)
        for k in range(grid.n_steps):
            t = times[k]
            psi = np.broadcast_to(psi_policy(t, z), z.shape)
            nj = rng.poisson(lam_int[k] * np.ones(block_size))
            nu, th = risk_prices(p, t, z, psi)
            log_l += ((1.0 - psi) * lam_int[k] - compensator * (nu * nu + th * th) * grid.dt
                      + nu * dw1[k] + th * dw2[k] + np.log(psi) * nj)
            z = z + factor_drift(p, t, z, "P", None, None) * grid.dt + dw1[k]
        return np.exp(log_l[: stop - start])

    return np.concatenate(map_blocks(run, n_paths, block_size, threads))
