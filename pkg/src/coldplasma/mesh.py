"""Structured axis-aligned hexahedral meshes.

Cells are numbered with x fastest: ``c = i + nx * (j + ny * k)``.  Every
interior face carries the +axis normal; side 1 of a face is the cell on the
lower side, side 2 the cell on the upper side (possibly across a periodic
identification).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

# relative slack used when deciding whether a point lies in the closed domain
LOCATE_TOL = 1e-12


class CellRef(NamedTuple):
    cell: int
    ref: np.ndarray


@dataclass(frozen=True)
class StructuredHexMesh:
    lower: np.ndarray
    upper: np.ndarray
    shape: tuple[int, int, int]
    periodic: tuple[bool, bool, bool] = (False, False, False)
    h: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(3)
        upper = np.asarray(self.upper, dtype=float).reshape(3)
        shape = tuple(int(n) for n in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ValueError(f"cells per dimension must be >= 1, got {self.shape}")
        if not np.all(upper > lower):
            raise ValueError(f"degenerate extents: lower={lower}, upper={upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        object.__setattr__(self, "h", (upper - lower) / np.array(shape, dtype=float))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    @property
    def h_min(self) -> float:
        return float(self.h.min())

    def cell_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        nx, ny, _ = self.shape
        return ijk[..., 0] + nx * (ijk[..., 1] + ny * ijk[..., 2])

    def cell_multi_index(self, cells) -> np.ndarray:
        cells = np.asarray(cells)
        nx, ny, _ = self.shape
        return np.stack([cells % nx, (cells // nx) % ny, cells // (nx * ny)], axis=-1)

    def cell_origin(self, cells) -> np.ndarray:
        return self.lower + self.cell_multi_index(cells) * self.h

    def all_cell_origins(self) -> np.ndarray:
        return self.cell_origin(np.arange(self.n_cells))

    def ref_to_physical(self, cell, ref) -> np.ndarray:
        return self.cell_origin(cell) + np.asarray(ref) * self.h

    # -- faces -----------------------------------------------------------

    def interior_faces(self, axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Pairs ``(side1, side2)`` of cells sharing a face normal to ``axis``."""
        n = self.shape
        grids = np.meshgrid(*[np.arange(s) for s in n], indexing="ij")
        ijk = np.stack([g.ravel(order="F") for g in grids], axis=-1)
        if self.periodic[axis]:
            left = ijk
        else:
            left = ijk[ijk[:, axis] < n[axis] - 1]
        right = left.copy()
        right[:, axis] = (right[:, axis] + 1) % n[axis]
        return self.cell_index(left), self.cell_index(right)

    @property
    def n_interior_faces(self) -> int:
        return sum(len(self.interior_faces(d)[0]) for d in range(3))

    # -- point location --------------------------------------------------

    def wrap(self, x) -> np.ndarray:
        """Map points into the fundamental box along periodic axes."""
        x = np.array(x, dtype=float, copy=True)
        ext = self.upper - self.lower
        for d in range(3):
            if self.periodic[d]:
                x[..., d] = self.lower[d] + np.mod(x[..., d] - self.lower[d], ext[d])
        return x

    def locate_points(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised point location.

        Returns ``(cells, ref, inside)``; entries with ``inside == False`` carry
        cell ``-1``.  Points on shared faces go to the lower-index cell.
        """
        x = self.wrap(np.atleast_2d(np.asarray(x, dtype=float)))
        s = (x - self.lower) / self.h
        n = np.array(self.shape)
        tol = LOCATE_TOL * np.maximum(n, 1)
        inside = np.all((s >= -tol) & (s <= n + tol), axis=1)
        idx = np.ceil(s).astype(np.int64) - 1
        idx = np.clip(idx, 0, n - 1)
        ref = np.clip(s - idx, 0.0, 1.0)
        cells = np.where(inside, self.cell_index(idx), -1)
        return cells, ref, inside

    def locate_point(self, x) -> Optional[CellRef]:
        cells, ref, inside = self.locate_points(np.asarray(x, dtype=float)[None, :])
        if not inside[0]:
            return None
        return CellRef(int(cells[0]), ref[0])


def build_mesh(lower, upper, n_cells, periodic=(False, False, False)) -> StructuredHexMesh:
    return StructuredHexMesh(np.asarray(lower, float), np.asarray(upper, float),
                             tuple(n_cells), tuple(periodic))


class Segments(NamedTuple):
    """Flattened straight sub-segments of many particle moves.

    ``start``/``end`` are in unwrapped coordinates; ``cell`` is the wrapped
    cell holding the segment and ``ref_start``/``ref_end`` the reference
    coordinates of its endpoints inside that cell.
    """
    particle: np.ndarray
    start: np.ndarray
    end: np.ndarray
    cell: np.ndarray
    ref_start: np.ndarray
    ref_end: np.ndarray
    counts: np.ndarray


def segment_moves(mesh: StructuredHexMesh, a, b) -> Segments:
    """Split each straight move ``a[p] -> b[p]`` at every grid plane it crosses.

    ``b`` may lie outside the fundamental box along periodic axes (unwrapped
    trajectory); ``a`` should be inside it.  A stationary move yields one
    degenerate segment.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    npart = a.shape[0]
    sa = (a - mesh.lower) / mesh.h
    sb = (b - mesh.lower) / mesh.h
    ds = sb - sa

    lo = np.minimum(sa, sb)
    hi = np.maximum(sa, sb)
    first = np.floor(lo) + 1.0          # first integer strictly above lo
    last = np.ceil(hi) - 1.0            # last integer strictly below hi
    counts = np.maximum(last - first + 1.0, 0.0).astype(np.int64)
    kmax = counts.max(axis=0) if npart else np.zeros(3, dtype=np.int64)

    cand = [np.zeros((npart, 1)), np.ones((npart, 1))]
    with np.errstate(divide="ignore", invalid="ignore"):
        for d in range(3):
            for j in range(int(kmax[d])):
                plane = first[:, d] + j
                t = (plane - sa[:, d]) / ds[:, d]
                valid = j < counts[:, d]
                cand.append(np.where(valid, t, np.nan)[:, None])
    t_all = np.sort(np.concatenate(cand, axis=1), axis=1)  # nan sorts last

    # drop coincident breakpoints (corner/edge crossings)
    t0 = t_all[:, :-1]
    t1 = t_all[:, 1:]
    keep = np.isfinite(t0) & np.isfinite(t1) & (t1 - t0 > 1e-14)
    # a stationary or tiny move still gets one segment
    none_kept = ~keep.any(axis=1)
    keep[none_kept, 0] = True
    t1 = t1.copy()
    t1[none_kept, 0] = 1.0
    # merge dropped intervals into the following kept one so the union is [0, 1]
    pid, seg = np.nonzero(keep)
    tstart = np.empty(pid.shape)
    tend = t1[pid, seg]
    newp = np.ones(len(pid), dtype=bool)
    newp[1:] = pid[1:] != pid[:-1]
    tstart[newp] = 0.0
    tstart[~newp] = tend[:-1][~newp[1:]]
    # the last kept segment of each particle must end at t=1
    lastp = np.ones(len(pid), dtype=bool)
    lastp[:-1] = pid[1:] != pid[:-1]
    tend = np.where(lastp, 1.0, tend)

    start = a[pid] + tstart[:, None] * (b - a)[pid]
    end = a[pid] + tend[:, None] * (b - a)[pid]
    start[newp] = a[pid[newp]]
    end[lastp] = b[pid[lastp]]

    n = np.array(mesh.shape)
    smid = 0.5 * ((start + end) - 2 * mesh.lower) / mesh.h
    idx = np.floor(smid).astype(np.int64)
    for d in range(3):
        if not mesh.periodic[d]:
            idx[:, d] = np.clip(idx[:, d], 0, n[d] - 1)
    origin = mesh.lower + idx * mesh.h
    ref_start = (start - origin) / mesh.h
    ref_end = (end - origin) / mesh.h
    wrapped = np.mod(idx, n)
    cells = mesh.cell_index(wrapped)
    seg_counts = np.bincount(pid, minlength=npart)
    return Segments(pid, start, end, cells, ref_start, ref_end, seg_counts)


def intersect_segment_with_faces(mesh: StructuredHexMesh, a, b) -> list[np.ndarray]:
    """Ordered crossing points ``[a, A_1, ..., b]`` of the move ``a -> b``."""
    segs = segment_moves(mesh, np.asarray(a, float)[None, :], np.asarray(b, float)[None, :])
    return [segs.start[0]] + [p for p in segs.end]
