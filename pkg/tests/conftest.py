import numpy as np
import pytest

from lifecycle_obpi.coefficients import Constant
from lifecycle_obpi.config import build_config
from lifecycle_obpi.dual import solve_dual
from lifecycle_obpi.market import (IncomeSpec, MarketParams, Model, MortalityCurve, PreferenceSpec,
                                   TimeGrid)


def desk_market(**kw) -> MarketParams:
    base = dict(r=0.03, alpha=0.07, beta=0.2, sigma=0.1, gamma=-0.1, eta=0.0, lam=1.0)
    base.update(kw)
    coef = {k: (v if callable(v) else Constant(float(v))) for k, v in base.items()
            if k in ("r", "alpha", "beta", "sigma", "gamma", "eta", "lam")}
    rest = {k: v for k, v in base.items() if k not in coef}
    return MarketParams(**coef, **rest)


def desk_model(delta=0.5, T=10.0, mu=0.01, ell=1.0, rho=0.02, kappa=0.05, **market) -> Model:
    return Model(desk_market(**market), MortalityCurve(Constant(mu), T), IncomeSpec(Constant(ell)),
                 PreferenceSpec(Constant(rho), kappa, delta))


@pytest.fixture(scope="session")
def model():
    return desk_model()


@pytest.fixture(scope="session")
def dual(model):
    return solve_dual(model, 100, 100)


@pytest.fixture(scope="session")
def smoke_cfg():
    return build_config({"pde": {"n_t": 40, "n_z": 40},
                         "mc": {"n_steps": 100, "n_paths": 4000, "record_every": 5, "block_size": 1024,
                                "homogeneity_paths": 1000, "dual_mc_paths": 2000}})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


GRID = TimeGrid(10.0, 100)
