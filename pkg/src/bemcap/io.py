"""OFF meshes, legacy VTK exports and CSV convergence histories."""

from __future__ import annotations

import csv
import os

import numpy as np

from .mesh import MeshError, Triangulation, check_triangulation, longest_edge_first

CSV_COLUMNS = ("level", "number_of_elements", "number_of_dofs", "capacity", "estimator",
               "iterations", "capacity_error", "cond")


class OffError(MeshError):
    """Malformed or invalid OFF file; the message carries path and line."""


def _content_lines(path):
    """Yield ``(line_number, tokens)`` for non-blank lines with comments stripped."""
    with open(path, "r", encoding="ascii") as fh:
        for num, raw in enumerate(fh, start=1):
            tokens = raw.split("#", 1)[0].split()
            if tokens:
                yield num, tokens


def load_off(path, reference_edges: str = "keep") -> Triangulation:
    """Read a closed triangulated surface from an ASCII OFF file.

    Parameters
    ----------
    path : str or path-like
    reference_edges : {"keep", "longest"}
        ``"keep"`` takes the first two vertices of each face as its reference
        edge; ``"longest"`` rotates every face so its longest edge comes first.

    Raises
    ------
    OffError
        On syntax errors, non-triangular faces, open or inconsistently
        oriented surfaces. The message names the file and line.
    OSError
        If the file cannot be read.
    """
    if reference_edges not in ("keep", "longest"):
        raise ValueError(f"unknown reference_edges {reference_edges!r}")
    lines = _content_lines(path)

    def fail(num, msg):
        raise OffError(f"{path}:{num}: {msg}")

    try:
        num, tok = next(lines)
    except StopIteration:
        raise OffError(f"{path}: empty file") from None
    if tok[0] != "OFF":
        fail(num, f"expected header 'OFF', got {tok[0]!r}")
    tok = tok[1:]
    if not tok:
        try:
            num, tok = next(lines)
        except StopIteration:
            fail(num, "missing counts line")
    try:
        nv, nf = int(tok[0]), int(tok[1])
    except (IndexError, ValueError):
        fail(num, "counts line must start with two integers")
    if nv < 3 or nf < 1:
        fail(num, f"need at least 3 vertices and 1 face, got {nv} and {nf}")

    verts = np.empty((nv, 3))
    for i in range(nv):
        try:
            num, tok = next(lines)
        except StopIteration:
            fail(num, f"file ends after {i} of {nv} vertices")
        if len(tok) < 3:
            fail(num, f"vertex {i} needs 3 coordinates")
        try:
            verts[i] = [float(t) for t in tok[:3]]
        except ValueError:
            fail(num, f"vertex {i} has a non-numeric coordinate")

    faces = np.empty((nf, 3), dtype=np.int64)
    face_line = np.empty(nf, dtype=np.int64)
    for k in range(nf):
        try:
            num, tok = next(lines)
        except StopIteration:
            fail(num, f"file ends after {k} of {nf} faces")
        try:
            arity = int(tok[0])
            idx = [int(t) for t in tok[1:1 + arity]]
        except ValueError:
            fail(num, f"face {k} has a non-integer entry")
        if arity != 3:
            fail(num, f"face {k} has {arity} vertices; only triangles are supported")
        if len(idx) != 3:
            fail(num, f"face {k} lists {len(idx)} of 3 vertex indices")
        faces[k] = idx
        face_line[k] = num

    try:
        check_triangulation(verts, faces)
    except MeshError as exc:
        if exc.triangle is None:
            raise OffError(f"{path}: {exc}") from None
        raise OffError(f"{path}:{face_line[exc.triangle]}: {exc}", triangle=exc.triangle) from None
    if reference_edges == "longest":
        faces = longest_edge_first(verts, faces)
    return Triangulation(verts, faces)


def save_off(mesh: Triangulation, path):
    """Write ``mesh`` as ASCII OFF; coordinates round-trip exactly."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.num_vertices} {mesh.num_triangles} 0\n")
        for p in mesh.vertices:
            fh.write(" ".join(repr(float(c)) for c in p) + "\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def export_vtk(mesh: Triangulation, field, path, name: str = "eta_sq"):
    """Legacy ASCII VTK polydata with one cell scalar per triangle."""
    values = np.asarray(field, dtype=float).ravel()
    if values.size != len(mesh):
        raise ValueError(f"field has {values.size} values for {len(mesh)} triangles")
    lines = ["# vtk DataFile Version 3.0", f"{name} on {len(mesh)} triangles", "ASCII",
             "DATASET POLYDATA", f"POINTS {mesh.num_vertices} double"]
    lines += [" ".join(repr(float(c)) for c in p) for p in mesh.vertices]
    lines.append(f"POLYGONS {len(mesh)} {4 * len(mesh)}")
    lines += [f"3 {t[0]} {t[1]} {t[2]}" for t in mesh.triangles]
    lines += [f"CELL_DATA {len(mesh)}", f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
    lines += [repr(float(v)) for v in values]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_cell_scalars(path):
    """Cell count and the scalar values of a file written by :func:`export_vtk`."""
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.read().split("\n")
    start = next(i for i, s in enumerate(tokens) if s.startswith("CELL_DATA"))
    ncell = int(tokens[start].split()[1])
    values = np.array([float(s) for s in tokens[start + 3:start + 3 + ncell]])
    return ncell, values


def _cell(value, fmt="r"):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if fmt == "capacity":
        return f"{float(value):.12g}"
    return repr(float(value))


def history_rows(records):
    """CSV rows (header first) for a list of :class:`AdaptiveRecord`."""
    rows = [list(CSV_COLUMNS)]
    for r in records:
        rows.append([_cell(r.level), _cell(r.num_elements), _cell(r.num_dofs),
                     _cell(r.capacity, "capacity"), _cell(r.estimator), _cell(r.iterations),
                     _cell(r.capacity_error), _cell(r.cond)])
    return rows


def write_history(records, path):
    """Write the convergence history as CSV with fixed column order."""
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="", encoding="ascii") as fh:
        csv.writer(fh, lineterminator="\n").writerows(history_rows(records))


def read_history(path):
    """Parse a history CSV into a list of dicts with None for blank cells."""
    with open(path, newline="", encoding="ascii") as fh:
        out = []
        for row in csv.DictReader(fh):
            rec = {}
            for key, val in row.items():
                if val == "":
                    rec[key] = None
                elif key in ("level", "number_of_elements", "number_of_dofs", "iterations"):
                    rec[key] = int(val)
                else:
                    rec[key] = float(val)
            out.append(rec)
        return out
