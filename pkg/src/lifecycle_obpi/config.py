"""Run configuration: a single JSON document resolved into model objects."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .american_put import GuaranteeSpec
from .coefficients import ConfigError, Table, from_config
from .dual import PsiBounds
from .market import IncomeSpec, MarketParams, Model, MortalityCurve, PreferenceSpec, TimeGrid

DEFAULTS = {
    "market": {"r": 0.03, "alpha": 0.07, "beta": 0.2, "sigma": 0.1, "gamma": -0.1, "eta": 0.0,
               "lambda": 1.0, "corr_w1w2": 0.0, "s0": 1.0, "z0": 0.0, "x0": 10.0},
    "mortality": {"mu": 0.01, "T": 10.0},
    "income": {"ell": 1.0},
    "preferences": {"rho": 0.02, "kappa": 0.05, "delta": 0.5},
    "pde": {"n_t": 200, "n_z": 200, "psi_min": 1e-4, "psi_max": 50.0, "convergence_levels": 3},
    "mc": {"n_steps": 500, "n_paths": 100000, "seed": 20240917, "block_size": 4096,
           "record_every": 5, "threads": 1, "homogeneity_paths": 10000,
           "dual_mc_paths": 20000},
    "put": {"basis_degree": 3, "exercise_every": 5, "d_bins": 20, "z_bins": 10, "bump": 0.01},
    "guarantee": {"kind": "rate_guarantee", "r_g": 0.0, "fraction": 0.8},
    "obpi": {"tol": 1e-8, "rho_lo": 1e-3, "narrow_width": 0.1},
    "validate": {"K": 10.0, "lipschitz": 50.0},
    "output": {"dir": "out", "export_paths": 50},
}

# keys that cannot change any numerical result and are excluded from the hash
_UNHASHED = {("mc", "threads"), ("output", "dir"), ("output", "export_paths")}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path
    model: Model
    bounds: PsiBounds
    guarantee: GuaranteeSpec
    tables: dict = field(default_factory=dict)  # key -> sha256 of any CSV table used

    # convenience views
    @property
    def pde(self) -> dict:
        return self.raw["pde"]

    @property
    def mc(self) -> dict:
        return self.raw["mc"]

    @property
    def put(self) -> dict:
        return self.raw["put"]

    @property
    def obpi(self) -> dict:
        return self.raw["obpi"]

    @property
    def out_dir(self) -> Path:
        p = Path(self.raw["output"]["dir"])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.model.T, int(self.mc["n_steps"]))

    @property
    def seed(self) -> int:
        return int(self.mc["seed"])

    @property
    def threads(self) -> int:
        return int(self.mc["threads"])

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw, self.tables)


def config_hash(raw: dict, tables: dict | None = None) -> str:
    clean = copy.deepcopy(raw)
    for sec, key in _UNHASHED:
        clean.get(sec, {}).pop(key, None)
    clean["_tables"] = dict(sorted((tables or {}).items()))
    text = json.dumps(clean, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _coef(raw: dict, section: str, key: str, base: Path, tables: dict):
    spec = raw[section][key]
    f = from_config(spec, f"{section}.{key}", base)
    if isinstance(f, Table):
        tables[f"{section}.{key}"] = hashlib.sha256(Path(f.source).read_bytes()).hexdigest()
    return f


def build_config(raw: dict, base_dir: Path | str = ".", overrides: dict | None = None) -> RunConfig:
    """Merge a (partial) config dict with defaults and resolve it into model objects."""
    raw = _merge(DEFAULTS, raw)
    if overrides:
        raw = _merge(raw, overrides)
    base = Path(base_dir)
    tables: dict = {}
    try:
        mk = raw["market"]
        market = MarketParams(
            r=_coef(raw, "market", "r", base, tables), alpha=_coef(raw, "market", "alpha", base, tables),
            beta=_coef(raw, "market", "beta", base, tables), sigma=_coef(raw, "market", "sigma", base, tables),
            gamma=_coef(raw, "market", "gamma", base, tables), eta=_coef(raw, "market", "eta", base, tables),
            lam=_coef(raw, "market", "lambda", base, tables), corr=float(mk["corr_w1w2"]),
            s0=float(mk["s0"]), z0=float(mk["z0"]), x0=float(mk["x0"]))
        mortality = MortalityCurve(_coef(raw, "mortality", "mu", base, tables), float(raw["mortality"]["T"]))
        income = IncomeSpec(_coef(raw, "income", "ell", base, tables))
        pr = raw["preferences"]
        prefs = PreferenceSpec(_coef(raw, "preferences", "rho", base, tables), float(pr["kappa"]), float(pr["delta"]))
        bounds = PsiBounds(float(raw["pde"]["psi_min"]), float(raw["pde"]["psi_max"]))
        gs = raw["guarantee"]
        guarantee = GuaranteeSpec(gs["kind"], _coef(raw, "guarantee", "r_g", base, tables), float(gs["fraction"]))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if raw["mc"]["n_steps"] % raw["put"]["exercise_every"] or raw["mc"]["n_steps"] % raw["mc"]["record_every"]:
        raise ConfigError("mc.n_steps must be a multiple of put.exercise_every and mc.record_every")
    if "seed" not in raw["mc"]:
        raise ConfigError("mc.seed must be given explicitly")
    return RunConfig(raw, base, Model(market, mortality, income, prefs), bounds, guarantee, tables)


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return build_config(raw, path.parent, overrides)
