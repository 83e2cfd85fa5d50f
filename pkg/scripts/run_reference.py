"""Run every pipeline stage on one configuration and print a compact summary.

    python scripts/run_reference.py --config configs/smoke.json
"""

from __future__ import annotations

import argparse
import time
from dataclasses import dataclass
from pathlib import Path

from lifecycle_obpi.config import load_config
from lifecycle_obpi.pipeline import COMMANDS, dump_config

STAGES = ("validate", "solve", "simulate", "price-put", "obpi", "verify")


@dataclass
class RunSettings:
    config: Path = Path(__file__).resolve().parents[1] / "configs" / "reference.json"
    out: Path | None = None
    stages: tuple = STAGES


def run(settings: RunSettings) -> bool:
    overrides = {"output": {"dir": str(settings.out.resolve())}} if settings.out else None
    cfg = load_config(settings.config, overrides)
    dump_config(cfg)
    ok = True
    for stage in settings.stages:
        t0 = time.perf_counter()
        rep = COMMANDS[stage](cfg)
        ok &= rep.ok
        print(f"== {stage}: {'ok' if rep.ok else 'FAILED'} in {time.perf_counter() - t0:.1f}s")
        for line in rep.lines():
            print("   " + line)
    print(f"artifacts in {cfg.out_dir}")
    return ok


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=RunSettings.config)
    ap.add_argument("--out", type=Path)
    ap.add_argument("--stages", nargs="+", choices=STAGES, default=list(STAGES))
    a = ap.parse_args()
    raise SystemExit(0 if run(RunSettings(a.config, a.out, tuple(a.stages))) else 1)
