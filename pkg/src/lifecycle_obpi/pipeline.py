"""Batch commands: validate, solve, simulate, price-put, obpi, verify.

Each command reads the run configuration, consumes upstream artifacts
from the output directory (checking checksums and config hashes) and
writes its own CSV exports atomically.  Reports hold only deterministic
content; wall-clock timings go to a separate ``timings.csv``.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .american_put import build_context, exercise_boundary
from .checks import CHECK_NAMES, CheckResult, Suite
from .config import RunConfig
from .dual import DualSolution, solve_dual, solve_pde
from .market import validate_params, warn_if_correlated
from .obpi import admissibility_check, obpi_wealth, solve_initial_fraction
from .strategy import (allocation_residuals, budget_check, martingale_identity, primal_objective,
                       simulate_unrestricted_wealth)

log = logging.getLogger(__name__)

DUAL_GRID = "dual_grid.csv"
PUT_MODEL = "put_model.json"


@dataclass
class RunReport:
    command: str
    config_hash: str
    rows: list = field(default_factory=list)  # CheckResult
    timings: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.rows)

    def add(self, name, passed, statistic=0.0, tolerance=0.0, detail=""):
        self.rows.append(CheckResult(name, bool(passed), float(statistic), float(tolerance), detail))

    def to_bytes(self) -> bytes:
        rows = ((r.name, r.status, r.statistic, r.tolerance, r.detail) for r in self.rows)
        return io.csv_bytes(["check", "status", "statistic", "tolerance", "detail"], rows)

    def write(self, out_dir: Path, name: str | None = None) -> Path:
        path = Path(out_dir) / (name or f"{self.command}_report.csv")
        io.write_artifact(path, self.to_bytes(), self.config_hash)
        if self.timings:
            t_rows = sorted(self.timings.items())
            io.atomic_write(path.with_name(path.stem + "_timings.csv"),
                            io.csv_bytes(["step", "seconds"], t_rows))
        return path

    def lines(self) -> list[str]:
        return [f"{r.status.upper():4s}  {r.name}: statistic={r.statistic:.6g} tolerance={r.tolerance:.6g}"
                for r in self.rows]


# ---------------------------------------------------------------------------
# dual artifacts

def _write_dual(cfg: RunConfig, dual: DualSolution, extra: dict) -> None:
    info = {"zeta_hat": dual.zeta_hat, "dual_value": dual.dual_value, "H0": dual.H0, "x0": dual.x0,
            "g0": dual.g0, "boundary_hits": int(dual.grid.boundary_hits), **extra}
    io.write_artifact(cfg.out_dir / DUAL_GRID, io.dual_grid_bytes(dual.grid), cfg.config_hash, info)


def load_dual(cfg: RunConfig) -> DualSolution:
    data, meta = io.read_artifact(cfg.out_dir / DUAL_GRID, cfg.config_hash, "lifecycle-obpi solve")
    info = meta["info"]
    grid = io.dual_grid_from_bytes(data, info)
    grid.boundary_hits = int(info["boundary_hits"])
    return DualSolution(grid, info["zeta_hat"], info["dual_value"], info["H0"], info["x0"], info["g0"])


# ---------------------------------------------------------------------------
# commands

def cmd_validate(cfg: RunConfig) -> RunReport:
    rep = RunReport("validate", cfg.config_hash)
    m = cfg.model
    issues = validate_params(m.market, m.mortality, cfg.grid, m.income, m.prefs, n_z=int(cfg.pde["n_z"]) + 1,
                             K=float(cfg.raw["validate"]["K"]), lipschitz=float(cfg.raw["validate"]["lipschitz"]))
    issues += cfg.guarantee.check(m, cfg.grid.times)
    if m.market.corr != 0.0:
        rep.add("correlation", True, m.market.corr, 0, "corr_w1w2 != 0 is honoured in simulation only")
    if not issues:
        rep.add("parameters", True, 0, 0, "ok")
    for msg in issues:
        rep.add("parameters", False, 1, 0, msg)
    rep.write(cfg.out_dir)
    return rep


def cmd_solve(cfg: RunConfig) -> RunReport:
    rep = RunReport("solve", cfg.config_hash)
    m = cfg.model
    n_t, n_z = int(cfg.pde["n_t"]), int(cfg.pde["n_z"])
    t0 = time.perf_counter()
    dual = solve_dual(m, n_t, n_z, cfg.bounds)
    rep.timings["solve"] = time.perf_counter() - t0
    levels = [dual.H0]
    for k in range(1, int(cfg.pde["convergence_levels"])):
        f = 2 ** k
        levels.append(solve_pde(m.market, m.prefs, m.mortality, n_t * f, n_z * f, cfg.bounds)
                      .value_at(0.0, m.market.z0))
    ratio = None
    if len(levels) >= 3 and levels[1] != levels[2]:
        ratio = abs(levels[0] - levels[1]) / abs(levels[1] - levels[2])
    rep.timings["convergence"] = time.perf_counter() - t0 - rep.timings["solve"]
    _write_dual(cfg, dual, {"n_t": n_t, "n_z": n_z, "levels_H0": levels, "richardson_ratio": ratio})
    rep.add("boundary_hits", dual.grid.boundary_hits == 0, dual.grid.boundary_hits, 0,
            "psi optimiser pinned at a search bound")
    rep.add("H0", True, dual.H0, 0, f"zeta_hat={dual.zeta_hat!r} dual_value={dual.dual_value!r}")
    if ratio is not None:
        rep.add("richardson_ratio", True, ratio, 4.0, "ratio of successive differences under grid doubling")
    rep.write(cfg.out_dir)
    return rep


def _export_paths(cfg: RunConfig, name: str, header, columns) -> None:
    """Write the first ``output.export_paths`` paths in long format (path, t, columns...)."""
    n_exp = int(cfg.raw["output"]["export_paths"])
    times = columns[0]
    arrays = [np.asarray(a)[:, :n_exp] for a in columns[1:]]
    rows = ((i, times[j], *(a[j, i] for a in arrays))
            for i in range(arrays[0].shape[1]) for j in range(len(times)))
    io.write_artifact(cfg.out_dir / name, io.csv_bytes(["path", "t", *header], rows), cfg.config_hash)


def cmd_simulate(cfg: RunConfig) -> RunReport:
    rep = RunReport("simulate", cfg.config_hash)
    dual = load_dual(cfg)
    m, mc = cfg.model, cfg.mc
    warn_if_correlated(m.market, "simulate")
    args = (cfg.grid, int(mc["n_paths"]), cfg.seed)
    kw = dict(record_every=int(mc["record_every"]), block_size=int(mc["block_size"]), threads=cfg.threads)
    t0 = time.perf_counter()
    q = simulate_unrestricted_wealth(m, dual, *args, measure="Q", **kw)
    p = simulate_unrestricted_wealth(m, dual, *args, measure="P", **kw)
    rep.timings["simulate"] = time.perf_counter() - t0
    for name, chk in (("budget", budget_check(q)), ("martingale_mid", martingale_identity(q, "mid")),
                      ("martingale_T", martingale_identity(q, "T"))):
        rep.add(name, chk.passes(), chk.z_score, 3.0, f"lhs={chk.lhs!r} rhs={chk.rhs!r} se={chk.se!r}")
    prim = primal_objective(p)
    rep.add("primal_vs_dual", prim.lhs <= prim.rhs + 3 * prim.se, prim.gap, 3 * prim.se,
            f"primal={prim.lhs!r} dual={prim.rhs!r}")
    c, ins = q.consumption_insurance()
    pi = q.allocation()
    res = allocation_residuals(m, dual, q.y[:, :1], q.times[:, None], q.unit.z[:, :1], pi[:, :1])
    rep.add("allocation_residual_max", True, float(np.max(np.abs(np.asarray(res)))), 0.0,
            "over-determined allocation system; reported only")
    _export_paths(cfg, "wealth_paths.csv", ["z", "y", "x", "c", "p", "pi"],
                  [q.times, q.unit.z, q.y, q.x, c, ins, pi])
    rep.write(cfg.out_dir)
    return rep


def _price(cfg: RunConfig, dual: DualSolution):
    m = cfg.model
    ctx = build_context(m, dual, cfg.guarantee, cfg.grid, int(cfg.mc["n_paths"]), cfg.seed,
                        int(cfg.put["exercise_every"]), int(cfg.put["basis_degree"]),
                        block_size=int(cfg.mc["block_size"]), threads=cfg.threads)
    ob = cfg.obpi
    frac = solve_initial_fraction(ctx, m.market.x0, dual.g0, dual.y0, float(ob["tol"]), float(ob["rho_lo"]),
                                  "regression", cfg.seed, float(ob["narrow_width"]))
    exercise_boundary(frac.quote, int(cfg.put["d_bins"]), int(cfg.put["z_bins"]))
    return frac


def cmd_price_put(cfg: RunConfig) -> RunReport:
    rep = RunReport("price-put", cfg.config_hash)
    dual = load_dual(cfg)
    t0 = time.perf_counter()
    frac = _price(cfg, dual)
    rep.timings["price"] = time.perf_counter() - t0
    q = frac.quote
    io.write_artifact(cfg.out_dir / PUT_MODEL, io.put_model_bytes(q, frac), cfg.config_hash)
    io.write_artifact(cfg.out_dir / "put_quote.csv",
                      io.csv_bytes(["rho0", "gap", "price", "se", "european", "european_se", "intrinsic"],
                                   [(frac.rho0, frac.gap, q.price, q.se, q.european, q.european_se, q.intrinsic0)]),
                      cfg.config_hash)
    b = q.boundary
    rows = ((t, b.d_edges[j, i], b.d_edges[j, i + 1], b.b[j, i])
            for j, t in enumerate(b.times) for i in range(b.b.shape[1]))
    io.write_artifact(cfg.out_dir / "exercise_boundary.csv", io.csv_bytes(["t", "d_lo", "d_hi", "b"], rows),
                      cfg.config_hash)
    rep.add("price_ge_intrinsic", q.price >= q.intrinsic0 - 3 * q.se, q.price - q.intrinsic0, 3 * q.se)
    rep.add("price_ge_european", q.price >= q.european - 3 * q.se, q.price - q.european, 3 * q.se)
    rep.add("fraction_gap", abs(frac.gap) <= float(cfg.obpi["tol"]), abs(frac.gap), float(cfg.obpi["tol"]),
            f"rho0={frac.rho0!r}")
    rep.write(cfg.out_dir)
    return rep


def cmd_obpi(cfg: RunConfig) -> RunReport:
    rep = RunReport("obpi", cfg.config_hash)
    dual = load_dual(cfg)
    data, _ = io.read_artifact(cfg.out_dir / PUT_MODEL, cfg.config_hash, "lifecycle-obpi price-put")
    _, frac = io.put_model_from_bytes(data, cfg.guarantee)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        run = obpi_wealth(cfg.model, dual, frac, cfg.grid, int(cfg.mc["n_paths"]), cfg.seed,
                          int(cfg.put["exercise_every"]), int(cfg.put["d_bins"]),
                          block_size=int(cfg.mc["block_size"]), threads=cfg.threads)
    for w in caught:
        log.warning("%s", w.message)
    rep.timings["obpi"] = time.perf_counter() - t0
    adm = admissibility_check(run, cfg.model.market.x0)
    rep.add("floor_violations", adm.floor_violations == 0, adm.floor_violations, 0,
            f"paths_with_violations={adm.paths_with_violations}")
    rep.add("x_hat0", abs(adm.x_hat0_gap) <= 1e-8, adm.x_hat0_gap, 1e-8)
    mart = adm.martingale
    rep.add("supermartingale", adm.supermartingale, mart.z_score, 3.0,
            f"lhs={mart.lhs!r} rhs={mart.rhs!r} se={mart.se!r} one_sided=upper")
    rep.add("ratchet", True, float(np.mean(run.rho[-1])), 1.0,
            f"ratchet_events={run.ratchet_events} clip_events={run.clip_events}")
    _export_paths(cfg, "obpi_paths.csv", ["y_star", "rho", "put", "x_hat", "k", "d"],
                  [run.times, run.y_star, run.rho, run.put, run.x_hat, run.k, run.d])
    rep.write(cfg.out_dir)
    return rep


def _check_existing(cfg: RunConfig) -> None:
    """Refuse artifacts in the output directory that came from another configuration."""
    for path in sorted(cfg.out_dir.glob("*.meta.json")):
        target = path.with_name(path.name[: -len(".meta.json")])
        if target.name == "verify_report.csv":
            continue
        io.read_artifact(target, cfg.config_hash)


def cmd_verify(cfg: RunConfig) -> RunReport:
    rep = RunReport("verify", cfg.config_hash)
    if cfg.out_dir.exists():
        _check_existing(cfg)
    dual = load_dual(cfg) if (cfg.out_dir / DUAL_GRID).exists() else None
    suite = Suite(cfg, dual)
    rep.rows = suite.run(CHECK_NAMES)
    rep.timings = suite.timings
    rep.write(cfg.out_dir)
    return rep


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "price-put": cmd_price_put,
    "obpi": cmd_obpi,
    "verify": cmd_verify,
}


def dump_config(cfg: RunConfig) -> None:
    io.write_artifact(cfg.out_dir / "resolved_config.json",
                      json.dumps(cfg.raw, sort_keys=True, indent=1).encode("utf-8"), cfg.config_hash)
