"""Render the CSV grids written by a sweep (needs matplotlib).

    python3 scripts/plot_results.py runs/desk

Writes error_boxplot.png, heatmaps.png and block1.png next to the CSVs.
"""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from stacked_pinn import godunov


def boxplot(out: Path):
    errs = defaultdict(list)
    with open(out / "boxplot.csv") as fh:
        for row in csv.DictReader(fh):
            errs[int(row["n"])].append(float(row["relative_l2"]))
    fig, ax = plt.subplots(figsize=(4, 3))
    ns = sorted(errs)
    ax.boxplot([errs[n] for n in ns], tick_labels=[str(n) for n in ns])
    ax.set_xlabel("residual blocks n")
    ax.set_ylabel("relative L2 error")
    fig.tight_layout()
    fig.savefig(out / "error_boxplot.png", dpi=150)


def heatmaps(out: Path, seed: int):
    field = godunov.read_field(out / "field.txt")
    maps = out / "heatmaps"
    ns = sorted({int(p.stem.split("_")[1][1:]) for p in maps.glob(f"pred_n*_s{seed}.csv")})
    extent = (0, field.grid.time_T, 0, field.grid.length_L)
    fig, axes = plt.subplots(2, len(ns) + 1, figsize=(3 * (len(ns) + 1), 5), squeeze=False)
    axes[0, 0].imshow(field.values.T, origin="lower", aspect="auto", extent=extent, vmin=0, vmax=1)
    axes[0, 0].set_title("Godunov")
    axes[1, 0].axis("off")
    for j, n in enumerate(ns, start=1):
        pred = np.loadtxt(maps / f"pred_n{n}_s{seed}.csv", delimiter=",")
        err = np.loadtxt(maps / f"error_n{n}_s{seed}.csv", delimiter=",")
        axes[0, j].imshow(pred.T, origin="lower", aspect="auto", extent=extent, vmin=0, vmax=1)
        axes[0, j].set_title(f"n = {n}")
        im = axes[1, j].imshow(np.abs(err).T, origin="lower", aspect="auto", extent=extent, cmap="magma")
        fig.colorbar(im, ax=axes[1, j])
    for ax in axes.flat:
        ax.set_xlabel("t")
    fig.tight_layout()
    fig.savefig(out / "heatmaps.png", dpi=150)


def block1(out: Path, seed: int):
    paths = sorted((out / "heatmaps").glob(f"block1_n*_s{seed}.csv"))
    if not paths:
        return
    field = godunov.read_field(out / "field.txt")
    fig, axes = plt.subplots(1, len(paths), figsize=(3.5 * len(paths), 3), squeeze=False)
    for ax, p in zip(axes[0], paths):
        im = ax.imshow(np.loadtxt(p, delimiter=",").T, origin="lower", aspect="auto",
                       extent=(0, field.grid.time_T, 0, field.grid.length_L), cmap="coolwarm")
        ax.set_title(p.stem)
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(out / "block1.png", dpi=150)


if __name__ == "__main__":
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/desk")
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    boxplot(out)
    heatmaps(out, seed)
    block1(out, seed)
    print(f"figures written to {out}")
