"""Legacy-VTK (ASCII) output of polygonal meshes and concentration fields.

The writer emits a POLYDATA dataset: points, polygon connectivity, cell data
(element-mean concentration, subdomain label, activation time when
available) and point data (the concentration sampled at mesh vertices).
Output is bit-stable for identical inputs: floats are written with repr.
"""

from __future__ import annotations

import numpy as np


class OutputError(Exception):
    pass


def _fmt(x):
    return repr(float(x))


def vertex_sampled_concentration(space, state, variable="lambda"):
    """Concentration at mesh vertices, averaged over adjacent elements."""
    mesh = space.mesh
    acc = np.zeros(len(mesh.vertices))
    cnt = np.zeros(len(mesh.vertices))
    vec = np.asarray(state, dtype=float)
    for k, loop in enumerate(mesh.elements):
        vals, _ = space.eval_state(vec, k, mesh.vertices[loop])
        if variable == "lambda":
            vals = np.exp(vals)
        acc[loop] += vals
        cnt[loop] += 1.0
    cnt[cnt == 0.0] = 1.0
    return acc / cnt


def write_fields(path, space, state, variable="lambda", activation=None,
                 extra_cell_data=None):
    """Write the mesh and a concentration state to a legacy-VTK file.

    Parameters
    ----------
    state : dof vector (lam for the exp_transform scheme, c for baseline)
    activation : optional per-element activation times (NaN -> -1 sentinel)
    extra_cell_data : optional {name: per-element array}
    """
    from .verify import element_mean_concentration

    mesh = space.mesh
    mean_c = element_mean_concentration(space, state, variable)
    point_c = vertex_sampled_concentration(space, state, variable)

    try:
        fh = open(path, "w")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    with fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("polyfk concentration field\n")
        fh.write("ASCII\n")
        fh.write("DATASET POLYDATA\n")
        fh.write(f"POINTS {len(mesh.vertices)} double\n")
        for v in mesh.vertices:
            fh.write(f"{_fmt(v[0])} {_fmt(v[1])} 0.0\n")
        size = sum(len(e) + 1 for e in mesh.elements)
        fh.write(f"POLYGONS {mesh.n_elements} {size}\n")
        for loop in mesh.elements:
            fh.write(" ".join([str(len(loop))] + [str(int(i)) for i in loop]) + "\n")

        fh.write(f"CELL_DATA {mesh.n_elements}\n")
        fh.write("SCALARS mean_c double 1\nLOOKUP_TABLE default\n")
        for v in mean_c:
            fh.write(_fmt(v) + "\n")
        fh.write("SCALARS label int 1\nLOOKUP_TABLE default\n")
        for v in mesh.element_label:
            fh.write(f"{int(v)}\n")
        if activation is not None:
            fh.write("SCALARS activation_time double 1\nLOOKUP_TABLE default\n")
            for v in activation:
                fh.write(_fmt(v if np.isfinite(v) else -1.0) + "\n")
        for name, arr in (extra_cell_data or {}).items():
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in arr:
                fh.write(_fmt(v) + "\n")

        fh.write(f"POINT_DATA {len(mesh.vertices)}\n")
        fh.write("SCALARS c double 1\nLOOKUP_TABLE default\n")
        for v in point_c:
            fh.write(_fmt(v) + "\n")
