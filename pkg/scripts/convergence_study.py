"""Grid-refinement study for the dual PDE and the deterministic-market put.

Writes two CSV tables:

* ``pde_convergence.csv``: V(0, z0) on doubled (n_t, n_z) grids with the
  ratio of successive differences (about 4 for a second-order scheme).
* ``lsm_convergence.csv``: LSM price against the dynamic-programming value
  in a riskless market as the time step shrinks.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field
from pathlib import Path

from lifecycle_obpi.american_put import GuaranteeSpec, build_context, lsm_price
from lifecycle_obpi.checks import deterministic_curves, deterministic_model, deterministic_put_dp
from lifecycle_obpi.config import load_config
from lifecycle_obpi.dual import solve_dual, solve_pde
from lifecycle_obpi.io import atomic_write, csv_bytes
from lifecycle_obpi.market import TimeGrid


@dataclass
class StudyConfig:
    config: Path = Path(__file__).resolve().parents[1] / "configs" / "reference.json"
    out: Path = Path("out/convergence")
    pde_base: int = 20
    pde_levels: int = 5
    lsm_steps: list = field(default_factory=lambda: [500, 1000, 2000, 5000])
    lsm_dates: int = 100
    lsm_y: float = 7.5


def pde_table(cfg, sc: StudyConfig):
    m = cfg.model
    rows, prev, prev_diff = [], None, None
    for k in range(sc.pde_levels):
        n = sc.pde_base * 2 ** k
        v = solve_pde(m.market, m.prefs, m.mortality, n, n, cfg.bounds).value_at(0.0, m.market.z0)
        diff = None if prev is None else v - prev
        ratio = "" if diff is None or prev_diff is None or diff == 0 else abs(prev_diff / diff)
        rows.append((n, n, v, "" if diff is None else diff, ratio))
        print(f"pde {n:4d}x{n:<4d} V0={v:.12f} ratio={ratio}")
        prev, prev_diff = v, diff
    return csv_bytes(["n_t", "n_z", "V0", "difference", "ratio"], rows)


def lsm_table(cfg, sc: StudyConfig):
    dm = deterministic_model(cfg.model)
    dd = solve_dual(dm, 100, 20, cfg.bounds)
    spec = GuaranteeSpec("zero")
    rows = []
    for n in sc.lsm_steps:
        ctx = build_context(dm, dd, spec, TimeGrid(dm.T, n), 16, cfg.seed, exercise_every=n // sc.lsm_dates)
        dp, _ = deterministic_put_dp(deterministic_curves(dm, dd, spec, ctx.times), spec, dm.market.x0, sc.lsm_y)
        price = lsm_price(ctx, sc.lsm_y, keep_paths=False).price
        rows.append((n, price, dp, price - dp))
        print(f"lsm steps={n:6d} price={price:.12f} dp={dp:.12f} error={price - dp:.3e}")
    return csv_bytes(["n_steps", "lsm", "dp", "error"], rows)


def main(sc: StudyConfig) -> None:
    cfg = load_config(sc.config)
    atomic_write(sc.out / "pde_convergence.csv", pde_table(cfg, sc))
    atomic_write(sc.out / "lsm_convergence.csv", lsm_table(cfg, sc))
    print(f"tables written to {sc.out}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description="grid-refinement study")
    ap.add_argument("--config", type=Path, default=StudyConfig.config)
    ap.add_argument("--out", type=Path, default=StudyConfig.out)
    ap.add_argument("--levels", type=int, default=StudyConfig.pde_levels)
    a = ap.parse_args()
    main(StudyConfig(config=a.config, out=a.out, pde_levels=a.levels))
