"""Plot exported OBPI paths (wealth against floor, ratchet fraction).

Needs matplotlib, which is not a package dependency; without it the script
prints per-date summaries instead.

    python scripts/plot_paths.py out/smoke/obpi_paths.csv
"""

from __future__ import annotations

import argparse
import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class PlotConfig:
    paths_csv: Path
    n_show: int = 10
    out: Path | None = None


def load(path: Path) -> dict:
    cols = defaultdict(list)
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            for k, v in row.items():
                cols[k].append(float(v))
    data = {k: np.asarray(v) for k, v in cols.items()}
    n_paths = int(data["path"].max()) + 1
    return {k: v.reshape(n_paths, -1) for k, v in data.items()}


def summarize(d: dict) -> None:
    t = d["t"][0]
    cushion = d["x_hat"] - d["k"]
    for j in range(0, len(t), max(1, len(t) // 10)):
        print(f"t={t[j]:6.2f} mean_rho={d['rho'][:, j].mean():.4f} "
              f"min_cushion={cushion[:, j].min():+.4e} mean_x_hat={d['x_hat'][:, j].mean():.4f}")


def plot(d: dict, pc: PlotConfig) -> None:
    import matplotlib.pyplot as plt

    t = d["t"][0]
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    for i in range(min(pc.n_show, d["t"].shape[0])):
        line, = ax1.plot(t, d["x_hat"][i], lw=0.8)
        ax1.plot(t, d["k"][i], lw=0.8, ls="--", color=line.get_color())
        ax2.step(t, d["rho"][i], where="post", lw=0.8, color=line.get_color())
    ax1.set_ylabel("wealth (solid) and floor (dashed)")
    ax2.set_ylabel("fraction held")
    ax2.set_xlabel("t")
    fig.tight_layout()
    if pc.out:
        fig.savefig(pc.out, dpi=120)
    else:
        plt.show()


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description="plot exported OBPI paths")
    ap.add_argument("paths_csv", type=Path)
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--out", type=Path)
    a = ap.parse_args()
    pc = PlotConfig(a.paths_csv, a.n, a.out)
    data = load(pc.paths_csv)
    summarize(data)
    try:
        plot(data, pc)
    except ImportError:
        print("matplotlib not installed; summary only")
