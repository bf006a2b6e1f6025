"""Polygon-filled field rendering of solver VTK snapshots."""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import PolyCollection

from .readers import SchemaError, read_vtk_polydata

# cell variables holding concentrations are clamped to the physical range
_CONCENTRATION_NAMES = ("mean_c", "c")


def plot_field(vtk_path, variable, out_path, title=None, cmap="viridis"):
    """Fill mesh polygons with a cell-data variable and add a colorbar."""
    data = read_vtk_polydata(vtk_path)
    if variable not in data.cell_data:
        raise SchemaError(
            f"unknown variable {variable!r}; available cell data: "
            f"{sorted(data.cell_data)}")
    values = data.cell_data[variable]
    verts = [data.points[poly][:, :2] for poly in data.polygons]

    fig, ax = plt.subplots(figsize=(7, 4))
    coll = PolyCollection(verts, array=values, cmap=cmap, edgecolor="k",
                          linewidth=0.2)
    if variable in _CONCENTRATION_NAMES:
        coll.set_clim(0.0, 1.0)
    ax.add_collection(coll)
    allpts = data.points[:, :2]
    ax.set_xlim(allpts[:, 0].min(), allpts[:, 0].max())
    ax.set_ylim(allpts[:, 1].min(), allpts[:, 1].max())
    ax.set_aspect("equal")
    fig.colorbar(coll, ax=ax, label=variable)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def front_position(vtk_path, level=0.5):
    """x location where the vertex-sampled concentration crosses a level.

    Scans the point data 'c' sorted by x and returns the first crossing,
    interpolated linearly; useful for checking travelling-wave displacement.
    """
    data = read_vtk_polydata(vtk_path)
    if "c" not in data.point_data:
        raise SchemaError("VTK file has no point data 'c'")
    x = data.points[:, 0]
    c = data.point_data["c"]
    order = np.argsort(x)
    x, c = x[order], c[order]
    # average duplicates (vertices at equal x)
    below = np.flatnonzero(c < level)
    if len(below) == 0:
        return float(x[-1])
    first = below[0]
    if first == 0:
        return float(x[0])
    x0, x1 = x[first - 1], x[first]
    c0, c1 = c[first - 1], c[first]
    if c0 == c1:
        return float(x0)
    return float(x0 + (level - c0) * (x1 - x0) / (c1 - c0))


def main(argv=None):
    ap = argparse.ArgumentParser(description="field rendering of a VTK snapshot")
    ap.add_argument("vtk")
    ap.add_argument("--variable", default="mean_c")
    ap.add_argument("--out", required=True)
    ap.add_argument("--title", default=None)
    args = ap.parse_args(argv)
    try:
        plot_field(args.vtk, args.variable, args.out, title=args.title)
    except (SchemaError, OSError) as exc:
        ap.exit(1, f"error: {exc}\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
