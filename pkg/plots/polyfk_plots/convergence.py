"""Convergence figures from study CSVs: log-log in h or dt, semilog in p.

Each CSV holds one sweep (one polynomial degree for h-studies); several CSVs
overlay as separate series.  Reference slope triangles annotate the expected
rates (p and p+1 for h-kind, the fitted slopes for dt-kind).
"""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .readers import SchemaError, read_convergence_csv


def degree_from_row(param, dofs):
    """Recover the polynomial degree from dofs = n_elements*(p+1)(p+2)/2."""
    per_elem = dofs / param
    p = (-3.0 + np.sqrt(1.0 + 8.0 * per_elem)) / 2.0
    return int(round(p))


def _slope_triangle(ax, x0, x1, y0, slope, label):
    ax.plot([x0, x1, x1, x0], [y0, y0, y0 * (x1 / x0) ** slope, y0], "k-", lw=0.8)
    ax.annotate(label, xy=(x1, np.sqrt(y0 * y0 * (x1 / x0) ** slope)),
                xytext=(3, 0), textcoords="offset points", fontsize=8)


def plot_convergence(csv_paths, kind, out_path, title=None):
    """Render one convergence figure from one or more study CSVs."""
    if isinstance(csv_paths, str):
        csv_paths = [csv_paths]
    tables = [read_convergence_csv(p) for p in csv_paths]
    for t in tables:
        if t["kind"] != kind:
            raise SchemaError(f"table kind {t['kind']!r} does not match plot kind {kind!r}")

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, norm in zip(axes, ("err_DG", "err_L2")):
        for i, t in enumerate(tables):
            err = t[norm]
            ok = np.isfinite(err)
            if kind == "h":
                # x axis: characteristic size ~ 1/sqrt(elements)
                x = 1.0 / np.sqrt(t["param"][ok])
                p = degree_from_row(t["param"][0], t["dofs"][0])
                ax.loglog(x, err[ok], "o-", label=f"p = {p}")
                ref = p if norm == "err_DG" else p + 1
                _slope_triangle(ax, x[-1], x[-2], err[ok][-1] * 0.6, ref, str(ref))
                ax.set_xlabel("1/sqrt(elements)")
            elif kind == "dt":
                x = t["param"][ok]
                ax.loglog(x, err[ok], "o-", label=f"series {i + 1}")
                slope = np.polyfit(np.log(x), np.log(err[ok]), 1)[0]
                _slope_triangle(ax, x[-1], x[-2], err[ok][-1] * 0.6, slope,
                                f"{slope:.1f}")
                ax.set_xlabel("dt")
            else:  # p sweep
                x = t["param"][ok]
                ax.semilogy(x, err[ok], "o-")
                ax.set_xlabel("polynomial degree p")
        ax.set_ylabel("DG-norm error" if norm == "err_DG" else "L2-norm error")
        ax.grid(True, which="both", alpha=0.3)
        if kind != "p":
            ax.legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def main(argv=None):
    ap = argparse.ArgumentParser(description="convergence figure from study CSVs")
    ap.add_argument("csv", nargs="+", help="convergence CSV file(s)")
    ap.add_argument("--kind", required=True, choices=["h", "p", "dt"])
    ap.add_argument("--out", required=True, help="output image path")
    ap.add_argument("--title", default=None)
    args = ap.parse_args(argv)
    try:
        plot_convergence(args.csv, args.kind, args.out, title=args.title)
    except (SchemaError, OSError) as exc:
        ap.exit(1, f"error: {exc}\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
