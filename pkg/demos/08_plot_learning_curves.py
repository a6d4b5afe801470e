"""Render learning curves from one or more run directories.

Usage:
    python demos/08_plot_learning_curves.py RUN_DIR [RUN_DIR ...] [--out FILE]

Reads each run's curve.csv (written by `cyberdial train`), labels it from
its manifest, and draws eval mean return with a +-1 std band.  Falls back
to a quick self-generated pair of runs when called with no arguments.
"""

import argparse
import csv
import json
import sys
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load_run(run_dir: Path):
    label = run_dir.name
    manifest = run_dir / "manifest.json"
    if manifest.exists():
        doc = json.loads(manifest.read_text())
        label = f"{doc['algorithm']} on {doc['scenario']} (seed {doc['seed']})"
    epochs, means, stds = [], [], []
    with open(run_dir / "curve.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            epochs.append(int(row["epoch"]))
            means.append(float(row["eval_mean_return"]))
            stds.append(float(row["eval_std_return"]))
    return label, epochs, means, stds


def make_quick_runs() -> list[Path]:
    from cyberdial.harness import main as cli
    base = Path(tempfile.mkdtemp(prefix="curves_"))
    for algo in ("dial", "qmix"):
        out = base / algo
        print(f"(no run dirs given: training a 60-epoch {algo} sample...)")
        cli(["train", "--algo", algo, "--scenario", "small", "--seed", "0",
             "--epochs", "60", "--episodes", "16", "--eval-episodes", "16",
             "--out", str(out), "--quiet"])
    return [base / "dial", base / "qmix"]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("runs", nargs="*", type=Path)
    parser.add_argument("--out", type=Path, default=Path("learning_curves.png"))
    args = parser.parse_args()

    run_dirs = args.runs or make_quick_runs()
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for run_dir in run_dirs:
        label, epochs, means, stds = load_run(run_dir)
        ax.plot(epochs, means, label=label)
        ax.fill_between(epochs,
                        [m - s for m, s in zip(means, stds)],
                        [m + s for m, s in zip(means, stds)], alpha=0.15)
    ax.set_xlabel("epoch")
    ax.set_ylabel("eval mean return")
    ax.set_title("greedy evaluation during training")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
