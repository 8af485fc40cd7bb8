"""Output formats: diagnostics CSV, legacy VTK snapshots, coefficient and particle dumps."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..mesh import StructuredHexMesh
from ..particles import ParticleSet
from ..semidiscrete import Discretization, FieldState

CSV_HEADER = ("t", "mass_rel_err", "energy_rel_err", "gauss_inf", "divB_L2", "removed_mass")
_VTK_HEX = 12
# corner order of a VTK hexahedron in (i, j, k) offsets
_HEX_CORNERS = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))


def format_row(row) -> str:
    return ",".join("%.17g" % float(v) for v in row)


def write_csv(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for row in rows:
            fh.write(format_row(row) + "\n")
    return path


def read_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        return np.array([[float(v) for v in row] for row in reader])


def cell_center_values(disc: Discretization, state: FieldState) -> dict:
    """Point values of every field at cell centres."""
    mesh = disc.mesh
    cells = np.arange(mesh.n_cells)
    ref = np.full((1, 3), 0.5)
    out = {}
    for name, space, coeffs in (("rho", disc.rho_space, state.rho), ("M", disc.M_space, state.M),
                                ("E", disc.N, state.E), ("B", disc.RT, state.B)):
        vals, _ = space.tabulate(ref)
        v = space.gather(coeffs, cells) @ vals[:, 0, :]
        out[name] = v[:, 0] if space.value_dim == 1 else v
    return out


def write_vtk(path, mesh: StructuredHexMesh, cell_data: dict, title: str = "coldplasma") -> Path:
    """Legacy ASCII unstructured grid of hexahedra with cell data."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nx, ny, nz = mesh.shape
    gx, gy, gz = (np.linspace(mesh.lower[d], mesh.upper[d], mesh.shape[d] + 1) for d in range(3))
    X, Y, Z = np.meshgrid(gx, gy, gz, indexing="ij")
    pts = np.stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")], axis=1)
    ijk = mesh.cell_multi_index(np.arange(mesh.n_cells))

    def pid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    conn = np.stack([pid(ijk[:, 0] + a, ijk[:, 1] + b, ijk[:, 2] + c) for a, b, c in _HEX_CORNERS], axis=1)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pts)} double\n")
        np.savetxt(fh, pts, fmt="%.17g")
        fh.write(f"CELLS {mesh.n_cells} {mesh.n_cells * 9}\n")
        np.savetxt(fh, np.hstack([np.full((mesh.n_cells, 1), 8), conn]), fmt="%d")
        fh.write(f"CELL_TYPES {mesh.n_cells}\n")
        np.savetxt(fh, np.full(mesh.n_cells, _VTK_HEX), fmt="%d")
        fh.write(f"CELL_DATA {mesh.n_cells}\n")
        for name, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(fh, values, fmt="%.17g")
            else:
                fh.write(f"VECTORS {name} double\n")
                np.savetxt(fh, values, fmt="%.17g")
    return path


def read_vtk(path) -> dict:
    """Read back files produced by :func:`write_vtk`."""
    tokens = Path(path).read_text().split("\n")
    out = {"cell_data": {}}
    i = 0
    ncell = None
    while i < len(tokens):
        line = tokens[i].strip()
        parts = line.split()
        if not parts:
            i += 1
            continue
        key = parts[0]
        if key == "POINTS":
            n = int(parts[1])
            out["points"] = np.array([tokens[i + 1 + r].split() for r in range(n)], dtype=float)
            i += n + 1
        elif key == "CELLS":
            n = int(parts[1])
            out["cells"] = np.array([tokens[i + 1 + r].split() for r in range(n)], dtype=np.int64)[:, 1:]
            i += n + 1
        elif key == "CELL_TYPES":
            n = int(parts[1])
            out["cell_types"] = np.array([tokens[i + 1 + r] for r in range(n)], dtype=np.int64)
            i += n + 1
        elif key == "CELL_DATA":
            ncell = int(parts[1])
            i += 1
        elif key == "SCALARS":
            out["cell_data"][parts[1]] = np.array(tokens[i + 2:i + 2 + ncell], dtype=float)
            i += 2 + ncell
        elif key == "VECTORS":
            out["cell_data"][parts[1]] = np.array([tokens[i + 1 + r].split() for r in range(ncell)],
                                                  dtype=float)
            i += 1 + ncell
        else:
            i += 1
    return out


def write_state_vtk(path, disc: Discretization, state: FieldState, title: str = "coldplasma") -> Path:
    return write_vtk(path, disc.mesh, cell_center_values(disc, state), title)


def dump_coefficients(path, state: FieldState, t: float) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, rho=state.rho, M=state.M, E=state.E, B=state.B, t=t,
             formulation=state.formulation.value)
    return path


def load_coefficients(path) -> dict:
    with np.load(path) as data:
        return {k: data[k] for k in data.files}


def dump_particles(path, ps: ParticleSet) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("id,x,y,z,ux,uy,uz,w,active\n")
        for i in range(len(ps)):
            vals = list(ps.X[i]) + list(ps.U[i]) + [ps.w[i]]
            fh.write(f"{i}," + ",".join("%.17g" % v for v in vals) + f",{int(ps.active[i])}\n")
    return path
