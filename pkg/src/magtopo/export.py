"""Plot-ready CSV and legacy ASCII VTK writers.

All numbers are written with ``repr`` so identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
from typing import Mapping, Optional

import numpy as np

from .mesh import Mesh


def _f(x) -> str:
    return repr(float(x))


def write_vtk(path, mesh: Mesh, point_data: Optional[Mapping] = None,
              cell_data: Optional[Mapping] = None, title: str = "magtopo") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = fh.write
        w("# vtk DataFile Version 3.0\n")
        w(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        w(f"POINTS {mesh.n_nodes} double\n")
        for x, y in mesh.nodes.tolist():
            w(f"{_f(x)} {_f(y)} 0.0\n")
        m = mesh.n_elements
        w(f"CELLS {m} {4 * m}\n")
        for i, j, k in mesh.triangles.tolist():
            w(f"3 {i} {j} {k}\n")
        w(f"CELL_TYPES {m}\n")
        w("5\n" * m)
        for header, count, data in (("POINT_DATA", mesh.n_nodes, point_data),
                                    ("CELL_DATA", m, cell_data)):
            if not data:
                continue
            w(f"{header} {count}\n")
            for name, values in data.items():
                values = np.asarray(values)
                if values.shape != (count,):
                    raise ValueError(f"{name}: expected {count} values, got {values.shape}")
                kind = "int" if values.dtype.kind in "biu" else "double"
                w(f"SCALARS {name} {kind} 1\nLOOKUP_TABLE default\n")
                if kind == "int":
                    w("".join(f"{int(v)}\n" for v in values.tolist()))
                else:
                    w("".join(f"{_f(v)}\n" for v in values.tolist()))


def write_trace_csv(path, theta, b_rad, b_target) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["theta", "b_rad", "b_target"])
        for row in zip(theta, b_rad, b_target):
            wr.writerow([_f(v) for v in row])


def write_sensitivity_csv(path, mesh: Mesh, sens) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["elem_id", "centroid_x", "centroid_y", "onoff", "topo"])
        topo = sens.topo
        for i, e in enumerate(sens.elements.tolist()):
            cx, cy = mesh.centroids[e]
            wr.writerow([e, _f(cx), _f(cy), _f(sens.onoff[i]), "" if topo is None else _f(topo[i])])


def write_history_csv(path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iter", "J", "switched", "reverted"])
        for r in history.records:
            wr.writerow([r.iteration, _f(r.J), r.switched, int(r.reverted)])


def write_design_csv(path, mesh: Mesh, flags) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["elem_id", "flag"])
        for e, f in zip(mesh.design_elements.tolist(), np.asarray(flags).tolist()):
            wr.writerow([e, int(f)])


def read_csv_columns(path) -> dict:
    """Small reader used by tests and notebooks: column name -> list of strings."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: [r[i] for r in body] for i, h in enumerate(header)}
