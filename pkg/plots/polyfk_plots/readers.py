"""Readers for the solver's on-disk interfaces: result CSVs and legacy VTK.

These parsers are deliberately independent of the solver package; they
consume only the documented file schemas.
"""

from __future__ import annotations

import csv

import numpy as np


class SchemaError(Exception):
    pass


CONVERGENCE_COLUMNS = ["kind", "param", "dofs", "err_L2", "err_DG",
                       "rate_L2", "rate_DG"]


def read_convergence_csv(path):
    """Read a convergence table; returns a dict of column arrays."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for col in CONVERGENCE_COLUMNS:
            if col not in (reader.fieldnames or []):
                raise SchemaError(f"{path}: missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    out = {"kind": rows[0]["kind"]}
    for col in CONVERGENCE_COLUMNS[1:]:
        out[col] = np.array([float(r[col]) if r[col] not in ("", "nan") else np.nan
                             for r in rows])
    return out


def read_series_csv(path):
    """Read a time-series CSV (t, S_h, min_c, mean_c_global, mean_c_label_*)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        for col in ("t", "S_h", "min_c", "mean_c_global"):
            if col not in names:
                raise SchemaError(f"{path}: missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    out = {}
    for col in names:
        out[col] = np.array([float(r[col]) for r in rows])
    out["label_columns"] = [c for c in names if c.startswith("mean_c_label_")]
    return out


def read_activation_csv(path):
    """Read activation times; 'NA' becomes NaN."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for col in ("element_id", "label", "t_activate"):
            if col not in (reader.fieldnames or []):
                raise SchemaError(f"{path}: missing column {col!r}")
        rows = list(reader)
    ids = np.array([int(r["element_id"]) for r in rows])
    labels = np.array([int(r["label"]) for r in rows])
    times = np.array([np.nan if r["t_activate"] == "NA" else float(r["t_activate"])
                      for r in rows])
    return ids, labels, times


class VtkPolyData:
    """Minimal legacy-VTK POLYDATA container."""

    def __init__(self, points, polygons, cell_data, point_data):
        self.points = points          # (np, 3)
        self.polygons = polygons      # list of index arrays
        self.cell_data = cell_data    # {name: array}
        self.point_data = point_data  # {name: array}


def read_vtk_polydata(path):
    """Parse the ASCII legacy-VTK POLYDATA files written by the solver."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    idx = 0

    def skip_blank():
        nonlocal idx
        while idx < len(lines) and not lines[idx]:
            idx += 1

    if not lines or not lines[0].startswith("# vtk DataFile"):
        raise SchemaError(f"{path}: not a legacy VTK file")
    idx = 4
    skip_blank()
    if not lines[idx].startswith("POINTS"):
        raise SchemaError(f"{path}: expected POINTS, got {lines[idx]!r}")
    n_pts = int(lines[idx].split()[1])
    idx += 1
    points = np.array([[float(t) for t in lines[idx + i].split()]
                       for i in range(n_pts)])
    idx += n_pts
    skip_blank()
    if not lines[idx].startswith("POLYGONS"):
        raise SchemaError(f"{path}: expected POLYGONS, got {lines[idx]!r}")
    n_poly = int(lines[idx].split()[1])
    idx += 1
    polygons = []
    for i in range(n_poly):
        parts = [int(t) for t in lines[idx + i].split()]
        if len(parts) != parts[0] + 1:
            raise SchemaError(f"{path}: malformed polygon line {lines[idx + i]!r}")
        polygons.append(np.array(parts[1:]))
    idx += n_poly

    def read_attributes(count):
        nonlocal idx
        data = {}
        while idx < len(lines):
            skip_blank()
            if idx >= len(lines) or not lines[idx].startswith("SCALARS"):
                break
            name = lines[idx].split()[1]
            idx += 2   # skip LOOKUP_TABLE line
            data[name] = np.array([float(lines[idx + i]) for i in range(count)])
            idx += count
        return data

    cell_data, point_data = {}, {}
    while idx < len(lines):
        skip_blank()
        if idx >= len(lines):
            break
        if lines[idx].startswith("CELL_DATA"):
            idx += 1
            cell_data = read_attributes(n_poly)
        elif lines[idx].startswith("POINT_DATA"):
            idx += 1
            point_data = read_attributes(n_pts)
        else:
            idx += 1
    return VtkPolyData(points, polygons, cell_data, point_data)
