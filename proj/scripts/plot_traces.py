#!/usr/bin/env python3
"""Plot epoch vs log10 error from the CSV traces written by `mgdl train`.

    python3 scripts/plot_traces.py RUN_DIR [--seed S] [--out FILE]

Grade boundaries of the MGDL trace are drawn as dotted vertical lines.
"""

import argparse
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def log10(series):
    return series.map(lambda v: math.log10(v) if v > 0 else float("nan"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    mgdl = pd.read_csv(args.run_dir / f"mgdl_trace_seed{args.seed}.csv")
    fcnn = pd.read_csv(args.run_dir / f"fcnn_trace_seed{args.seed}.csv")

    fig, axes = plt.subplots(1, 2, figsize=(11, 4), sharey=True)
    for ax, column, title in ((axes[0], "train_mse", "training"), (axes[1], "test_mse", "test")):
        ax.plot(fcnn["epoch"], log10(fcnn[column]), label="FCNN", color="tab:gray")
        for grade, part in mgdl.groupby("grade"):
            ax.plot(part["epoch"], log10(part[column]), label=f"MGDL grade {grade}")
        for start in mgdl.groupby("grade")["epoch"].min().iloc[1:]:
            ax.axvline(start, color="k", linestyle=":", linewidth=0.8)
        ax.set_xlabel("epoch")
        ax.set_title(f"{title} MSE, seed {args.seed}")
    axes[0].set_ylabel("log10 MSE")
    axes[1].legend(loc="upper right", fontsize=8)
    fig.tight_layout()

    out = args.out or args.run_dir / f"traces_seed{args.seed}.png"
    fig.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main()
