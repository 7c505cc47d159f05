#!/usr/bin/env python3
"""Plot the CSV outputs of `gcap experiment` runs.

    python3 tools/plot_experiment.py gcap-out [--out plots]

Every recognised CSV in the directory gets one PNG next to it (or in --out).
"""

import argparse
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

MEASURES = ["l2_product", "l1_path", "l2_path_sq", "spectral_product"]
TITLES = {
    "l2_product": "l2 norm",
    "l1_path": "l1-path norm",
    "l2_path_sq": "l2-path norm",
    "spectral_product": "spectral norm",
}


def measure_grid(df, x, groups, xlabel, path, logx=False):
    fig, axes = plt.subplots(1, len(MEASURES) + 1, figsize=(4 * (len(MEASURES) + 1), 3.2))
    for label, part in groups(df):
        part = part.sort_values(x)
        for ax, name in zip(axes, MEASURES):
            ax.plot(part[x], part["norm_" + name], marker="o", label=label)
        axes[-1].plot(part[x], part["test_error"], marker="o", label=label + " test")
        axes[-1].plot(part[x], part["train_error"], marker="x", linestyle="--", label=label + " train")
    for ax, name in zip(axes, MEASURES):
        ax.set_title(TITLES[name])
    axes[-1].set_title("error")
    for ax in axes:
        ax.set_xlabel(xlabel)
        if logx:
            ax.set_xscale("log", base=2)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def by_seed(df):
    for seed, part in df.groupby("seed"):
        yield f"seed {seed}", part


def true_vs_random(df, path):
    parts = df["sweep"].str.split("/", expand=True)
    df = df.assign(size=parts[0].astype(int), labels=parts[1])

    def groups(d):
        for (labels, seed), part in d.groupby(["labels", "seed"]):
            yield f"{labels} labels (seed {seed})", part

    measure_grid(df, "size", groups, "training samples", path)


def confusion(df, path):
    df = df.assign(confusion=df["sweep"].astype(int))
    measure_grid(df, "confusion", by_seed, "random-label samples added", path)


def hidden_sweep(df, path):
    df = df.assign(hidden=df["sweep"].astype(int))
    measure_grid(df, "hidden", by_seed, "hidden units", path, logx=True)


def pacbayes(df, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    for (sweep, seed), part in df.groupby(["sweep", "seed"]):
        part = part.sort_values("alpha")
        ax.plot(part["kl_half"], part["exp_sharpness"], marker="o", label=f"{sweep} (seed {seed})")
    ax.set_xscale("log")
    ax.set_xlabel("KL")
    ax.set_ylabel("expected sharpness")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def c2_curves(df, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    for layer, part in df.groupby("layer"):
        ax.plot(part["delta"], part["ratio"], label=f"layer {layer}")
    ax.plot(df["delta"].unique(), df["delta"].unique(), color="black", linestyle=":", label="ratio = delta")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("delta")
    ax.set_ylabel("fraction of |pre-activation| <= delta")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


PLOTTERS = {
    "true_vs_random.csv": true_vs_random,
    "confusion.csv": confusion,
    "hidden_sweep.csv": hidden_sweep,
}


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("results", type=pathlib.Path)
    parser.add_argument("--out", type=pathlib.Path)
    args = parser.parse_args()
    out = args.out or args.results
    out.mkdir(parents=True, exist_ok=True)

    written = []
    for csv in sorted(args.results.glob("*.csv")):
        df = pd.read_csv(csv)
        if df.empty:
            continue
        target = out / (csv.stem + ".png")
        if csv.name in PLOTTERS:
            PLOTTERS[csv.name](df, target)
        elif csv.name.endswith("_pacbayes.csv"):
            pacbayes(df, target)
        elif csv.name.endswith("_c2.csv"):
            c2_curves(df, target)
        else:
            continue
        written.append(target)
    for path in written:
        print(path)
    if not written:
        raise SystemExit(f"no plottable CSV files in {args.results}")


if __name__ == "__main__":
    main()
