"""Time-series panels: entropy decay, minimum concentration, region means."""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .readers import SchemaError, read_series_csv


def plot_series(csv_path, out_path, title=None):
    data = read_series_csv(csv_path)
    t = data["t"]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))

    ax = axes[0]
    ax.plot(t, data["S_h"], "-")
    ax.set_xlabel("t")
    ax.set_ylabel("discrete entropy S_h")
    ax.grid(alpha=0.3)

    ax = axes[1]
    minc = np.maximum(data["min_c"], 1e-300)
    ax.semilogy(t, minc, "-")
    ax.set_xlabel("t")
    ax.set_ylabel("min concentration")
    ax.grid(alpha=0.3)

    ax = axes[2]
    ax.plot(t, data["mean_c_global"], "-", label="global")
    for col in data["label_columns"]:
        ax.plot(t, data[col], "--", label=col.replace("mean_c_", ""))
    ax.set_xlabel("t")
    ax.set_ylabel("mean concentration")
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def main(argv=None):
    ap = argparse.ArgumentParser(description="time-series panels from a run CSV")
    ap.add_argument("csv")
    ap.add_argument("--out", required=True)
    ap.add_argument("--title", default=None)
    args = ap.parse_args(argv)
    try:
        plot_series(args.csv, args.out, title=args.title)
    except (SchemaError, OSError) as exc:
        ap.exit(1, f"error: {exc}\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
