"""Command line front end: ``lifecycle-obpi <command> --config run.json``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .coefficients import ConfigError
from .config import load_config
from .dual import PDEDivergence
from .io import ArtifactError
from .obpi import InfeasibleGuarantee
from .pipeline import COMMANDS, dump_config


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lifecycle-obpi",
                                 description="Life-cycle consumption, insurance and portfolio insurance pipeline.")
    ap.add_argument("command", choices=sorted(COMMANDS), help="pipeline stage to run")
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--seed", type=int, help="master seed (overrides mc.seed)")
    ap.add_argument("--paths", type=int, help="Monte Carlo paths (overrides mc.n_paths)")
    ap.add_argument("--threads", type=int, help="worker threads for block simulation")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def overrides_from(args) -> dict:
    over: dict = {}
    if args.out is not None:
        over.setdefault("output", {})["dir"] = str(Path(args.out).resolve())
    for key, name in (("seed", "seed"), ("paths", "n_paths"), ("threads", "threads")):
        val = getattr(args, key)
        if val is not None:
            if val < 0 or (key != "seed" and val == 0):
                raise ConfigError(f"--{key} must be positive")
            over.setdefault("mc", {})[name] = val
    return over


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, overrides_from(args))
        dump_config(cfg)
        report = COMMANDS[args.command](cfg)
    except (ConfigError, ArtifactError, PDEDivergence, InfeasibleGuarantee) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for line in report.lines():
        print(line)
    print(f"{args.command}: {'ok' if report.ok else 'FAILED'} (config {cfg.config_hash[:12]}, out {cfg.out_dir})")
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
