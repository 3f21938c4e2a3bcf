"""Legacy ASCII VTK emission, a minimal reader for round-trips, and CSV
history output. All writes go through a temp file in the target directory
followed by an atomic rename."""

from __future__ import annotations

import csv
import os
import tempfile

import numpy as np

from .mesh import Mesh


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _atomic_write(path: str, emit) -> None:
    dirname = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            emit(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_vtk(mesh: Mesh, point_fields: dict, cell_fields: dict, path: str,
              title: str = "piezotopo output") -> None:
    """Unstructured-grid legacy VTK with hexahedron cells (type 12)."""
    for name, arr in point_fields.items():
        if len(np.asarray(arr)) != mesh.n_nodes:
            raise ValueError(f"point field {name!r} has {len(arr)} entries, "
                             f"mesh has {mesh.n_nodes} nodes")
    for name, arr in cell_fields.items():
        if len(np.asarray(arr)) != mesh.n_elems:
            raise ValueError(f"cell field {name!r} has {len(arr)} entries, "
                             f"mesh has {mesh.n_elems} cells")

    def emit(f):
        f.write("# vtk DataFile Version 3.0\n")
        f.write(title[:255] + "\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.n_nodes} double\n")
        for p in mesh.coords:
            f.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")
        f.write(f"CELLS {mesh.n_elems} {mesh.n_elems * 9}\n")
        for conn in mesh.elems:
            f.write("8 " + " ".join(str(int(c)) for c in conn) + "\n")
        f.write(f"CELL_TYPES {mesh.n_elems}\n")
        for _ in range(mesh.n_elems):
            f.write("12\n")
        if point_fields:
            f.write(f"POINT_DATA {mesh.n_nodes}\n")
            for name, arr in point_fields.items():
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in np.asarray(arr, dtype=float):
                    f.write(_fmt(v) + "\n")
        if cell_fields:
            f.write(f"CELL_DATA {mesh.n_elems}\n")
            for name, arr in cell_fields.items():
                arr = np.asarray(arr)
                if np.issubdtype(arr.dtype, np.integer):
                    f.write(f"SCALARS {name} int 1\nLOOKUP_TABLE default\n")
                    for v in arr:
                        f.write(str(int(v)) + "\n")
                else:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in arr.astype(float):
                        f.write(_fmt(v) + "\n")

    _atomic_write(path, emit)


def read_vtk(path: str) -> dict:
    """Parse the subset of legacy VTK this package writes.

    Returns {"points": (n,3), "cells": (ne,8), "point_data": {...},
    "cell_data": {...}}.
    """
    with open(path) as f:
        tokens = f.read().split()
    out = {"points": None, "cells": None, "point_data": {}, "cell_data": {}}
    i = 0
    section = None
    n_points = n_cells = 0
    while i < len(tokens):
        t = tokens[i]
        if t == "POINTS":
            n_points = int(tokens[i + 1])
            vals = [float(v) for v in tokens[i + 3: i + 3 + 3 * n_points]]
            out["points"] = np.array(vals).reshape(n_points, 3)
            i += 3 + 3 * n_points
        elif t == "CELLS":
            n_cells = int(tokens[i + 1])
            total = int(tokens[i + 2])
            vals = [int(v) for v in tokens[i + 3: i + 3 + total]]
            cells = []
            j = 0
            while j < total:
                cnt = vals[j]
                cells.append(vals[j + 1: j + 1 + cnt])
                j += 1 + cnt
            out["cells"] = np.array(cells)
            i += 3 + total
        elif t == "POINT_DATA":
            section = ("point_data", int(tokens[i + 1]))
            i += 2
        elif t == "CELL_DATA":
            section = ("cell_data", int(tokens[i + 1]))
            i += 2
        elif t == "SCALARS":
            name = tokens[i + 1]
            kind = tokens[i + 2]
            count = section[1]
            # skip optional component count and LOOKUP_TABLE pair
            j = i + 3
            if tokens[j].isdigit():
                j += 1
            if tokens[j] == "LOOKUP_TABLE":
                j += 2
            conv = int if kind == "int" else float
            vals = [conv(v) for v in tokens[j: j + count]]
            out[section[0]][name] = np.array(vals)
            i = j + count
        else:
            i += 1
    return out


def write_history_csv(path: str, rows: list, n_modes: int) -> None:
    """History table, one row per iteration, atomically replaced."""
    header = (["iter", "F_k", "F_omega", "F_pe", "F_sb"]
              + [f"omega_oc_{i + 1}" for i in range(n_modes)]
              + [f"omega_sc_{i + 1}" for i in range(n_modes)]
              + [f"k2_{i + 1}" for i in range(n_modes)]
              + ["V_E", "G_V", "lambda", "N_phi1", "N_phi2"])
    for r in rows:
        if len(r) != len(header):
            raise ValueError(f"history row has {len(r)} fields, expected {len(header)}")

    def emit(f):
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])

    _atomic_write(path, emit)
