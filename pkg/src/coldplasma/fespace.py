"""Lowest-order compatible finite element spaces on structured hex meshes.

Families and their local degrees of freedom (reference cell ``[0,1]^3``):

* ``NodalQ``        continuous trilinear, one value per vertex
* ``VectorNodalQ``  three copies of ``NodalQ``; the constrained variant only
                    drops the normal component on the boundary
* ``EdgeN``         lowest-order edge elements, DOF = line integral along the
                    +axis oriented edge
* ``FaceRT``        lowest-order face elements, DOF = flux through the face
                    along the +axis normal
* ``BrokenDG``      discontinuous trilinear (``k=0``) or piecewise constant
                    (``k=-1``)

Because every cell of a structured mesh is a translate of the same box, all
local tables are shared between cells.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import StructuredHexMesh
from .solvers import CgConfig, cg_solve


class Family(str, Enum):
    NODAL_Q = "NodalQ"
    VECTOR_Q = "VectorNodalQ"
    EDGE_N = "EdgeN"
    FACE_RT = "FaceRT"
    BROKEN_DG = "BrokenDG"


@dataclass(frozen=True)
class SpaceKind:
    family: Family
    k: int = 0
    constrained: bool = False

    @property
    def poly_degree(self) -> int:
        if self.family in (Family.EDGE_N, Family.FACE_RT):
            return self.k
        return self.k + 1


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, 3) reference coordinates
    weights: np.ndarray  # (nq,) summing to the reference volume 1


def gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_rule(n: int) -> QuadratureRule:
    x, w = gauss_1d(n)
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    WX, WY, WZ = np.meshgrid(w, w, w, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    return QuadratureRule(pts, (WX * WY * WZ).ravel())


def face_rule(n: int, axis: int, side: float) -> QuadratureRule:
    """Tensor Gauss rule on the reference face ``x_axis = side`` (weights sum to 1)."""
    x, w = gauss_1d(n)
    A, B = np.meshgrid(x, x, indexing="ij")
    WA, WB = np.meshgrid(w, w, indexing="ij")
    others = [d for d in range(3) if d != axis]
    pts = np.empty((A.size, 3))
    pts[:, axis] = side
    pts[:, others[0]] = A.ravel()
    pts[:, others[1]] = B.ravel()
    return QuadratureRule(pts, (WA * WB).ravel())


def default_quadrature(k: int = 0) -> QuadratureRule:
    return gauss_rule(k + 3)


# entity types: 1 marks a direction in which the entity sits on a vertex plane
_ENTITY = {
    "V": (1, 1, 1),
    "Ex": (0, 1, 1), "Ey": (1, 0, 1), "Ez": (1, 1, 0),
    "Fx": (1, 0, 0), "Fy": (0, 1, 0), "Fz": (0, 0, 1),
}


def _lin(t, a):
    return t if a else 1.0 - t


def _dlin(a):
    return 1.0 if a else -1.0


def _local_layout(kind: SpaceKind) -> list[tuple[str, tuple[int, int, int], int]]:
    """(entity type, offset inside the cell, vector component) per local DOF."""
    corners = [(a, b, c) for c in (0, 1) for b in (0, 1) for a in (0, 1)]
    fam = kind.family
    if fam == Family.NODAL_Q:
        return [("V", o, 0) for o in corners]
    if fam == Family.VECTOR_Q:
        return [("V", o, d) for d in range(3) for o in corners]
    if fam == Family.EDGE_N:
        lay = [("Ex", (0, b, c), 0) for c in (0, 1) for b in (0, 1)]
        lay += [("Ey", (a, 0, c), 1) for c in (0, 1) for a in (0, 1)]
        lay += [("Ez", (a, b, 0), 2) for b in (0, 1) for a in (0, 1)]
        return lay
    if fam == Family.FACE_RT:
        return [("Fx", (a, 0, 0), 0) for a in (0, 1)] + \
               [("Fy", (0, b, 0), 1) for b in (0, 1)] + \
               [("Fz", (0, 0, c), 2) for c in (0, 1)]
    if fam == Family.BROKEN_DG:
        if kind.k == 0:
            return [("C", o, 0) for o in corners]
        return [("C", (0, 0, 0), 0)]
    raise ValueError(fam)


class FeSpace:
    """A finite element space together with its cell-to-global DOF map.

    ``cell_dofs[c, i]`` is the global index of local DOF ``i`` of cell ``c``
    or ``-1`` when that DOF is removed by the boundary constraint.
    """

    def __init__(self, mesh: StructuredHexMesh, kind: SpaceKind):
        if kind.family == Family.BROKEN_DG:
            if kind.k not in (-1, 0):
                raise ValueError(f"unsupported degree k={kind.k} for {kind.family.value}")
        elif kind.k != 0:
            raise ValueError(f"unsupported degree k={kind.k} for {kind.family.value}")
        self.mesh = mesh
        self.kind = kind
        self.layout = _local_layout(kind)
        self.n_local = len(self.layout)
        self.value_dim = 3 if kind.family in (Family.VECTOR_Q, Family.EDGE_N, Family.FACE_RT) else 1
        self._number()

    @property
    def family(self) -> Family:
        return self.kind.family

    def __repr__(self):
        c = ", constrained" if self.kind.constrained else ""
        return f"FeSpace({self.family.value}, k={self.kind.k}{c}, n_dofs={self.n_dofs})"

    def _number(self):
        mesh = self.mesh
        n = np.array(mesh.shape)
        nv = np.array([n[d] if mesh.periodic[d] else n[d] + 1 for d in range(3)])
        ijk = mesh.cell_multi_index(np.arange(mesh.n_cells))
        ncell = mesh.n_cells

        if self.family == Family.BROKEN_DG:
            self.cell_dofs = (np.arange(ncell)[:, None] * self.n_local
                              + np.arange(self.n_local)[None, :])
            self.n_dofs = ncell * self.n_local
            self.n_full = self.n_dofs
            return

        # full numbering: blocks per (entity type, component)
        blocks = []
        for ent, _, comp in self.layout:
            if (ent, comp) not in blocks:
                blocks.append((ent, comp))
        offsets, sizes = {}, {}
        total = 0
        for key in blocks:
            flags = _ENTITY[key[0]]
            dims = np.where(np.array(flags) == 1, nv, n)
            offsets[key] = total
            sizes[key] = dims
            total += int(np.prod(dims))

        removed = np.zeros(total, dtype=bool)
        full = np.empty((ncell, self.n_local), dtype=np.int64)
        for loc, (ent, off, comp) in enumerate(self.layout):
            flags = _ENTITY[ent]
            dims = sizes[(ent, comp)]
            idx = ijk + np.array(off)
            on_bnd = np.zeros(ncell, dtype=bool)
            for d in range(3):
                if flags[d]:
                    if mesh.periodic[d]:
                        idx[:, d] %= nv[d]
                    else:
                        hit = (idx[:, d] == 0) | (idx[:, d] == n[d])
                        if self.family != Family.VECTOR_Q or d == comp:
                            on_bnd |= hit
            gid = offsets[(ent, comp)] + idx[:, 0] + dims[0] * (idx[:, 1] + dims[1] * idx[:, 2])
            full[:, loc] = gid
            if self.kind.constrained:
                removed[gid[on_bnd]] = True

        self.n_full = total
        keep = ~removed
        renum = -np.ones(total, dtype=np.int64)
        renum[keep] = np.arange(int(keep.sum()))
        self.full_dofs = full
        self.cell_dofs = renum[full]
        self.n_dofs = int(keep.sum())

    # -- reference tables --------------------------------------------------

    def tabulate(self, ref) -> tuple[np.ndarray, np.ndarray]:
        """Values ``(nloc, nq, vdim)`` and Jacobians ``(nloc, nq, 3, vdim)``.

        ``jac[..., i, j]`` is the physical derivative d/dx_i of component j.
        """
        ref = np.atleast_2d(np.asarray(ref, dtype=float))
        h = self.mesh.h
        nq = ref.shape[0]
        x, y, z = ref[:, 0], ref[:, 1], ref[:, 2]
        vals = np.zeros((self.n_local, nq, self.value_dim))
        jac = np.zeros((self.n_local, nq, 3, self.value_dim))
        fam = self.family

        if fam in (Family.NODAL_Q, Family.VECTOR_Q) or (fam == Family.BROKEN_DG and self.kind.k == 0):
            for loc, (_, (a, b, c), comp) in enumerate(self.layout):
                col = comp if fam == Family.VECTOR_Q else 0
                vals[loc, :, col] = _lin(x, a) * _lin(y, b) * _lin(z, c)
                jac[loc, :, 0, col] = _dlin(a) * _lin(y, b) * _lin(z, c) / h[0]
                jac[loc, :, 1, col] = _lin(x, a) * _dlin(b) * _lin(z, c) / h[1]
                jac[loc, :, 2, col] = _lin(x, a) * _lin(y, b) * _dlin(c) / h[2]
        elif fam == Family.BROKEN_DG:
            vals[0, :, 0] = 1.0
        elif fam == Family.EDGE_N:
            r = (x, y, z)
            for loc, (_, off, d) in enumerate(self.layout):
                p, q = [e for e in range(3) if e != d]
                fp, fq = _lin(r[p], off[p]), _lin(r[q], off[q])
                vals[loc, :, d] = fp * fq / h[d]
                jac[loc, :, p, d] = _dlin(off[p]) * fq / (h[d] * h[p])
                jac[loc, :, q, d] = fp * _dlin(off[q]) / (h[d] * h[q])
        elif fam == Family.FACE_RT:
            r = (x, y, z)
            for loc, (_, off, d) in enumerate(self.layout):
                p, q = [e for e in range(3) if e != d]
                area = h[p] * h[q]
                vals[loc, :, d] = _lin(r[d], off[d]) / area
                jac[loc, :, d, d] = _dlin(off[d]) / (area * h[d])
        return vals, jac

    def tabulate_derivative(self, ref, which: str) -> np.ndarray:
        """``grad`` (scalar families), ``curl`` (EdgeN) or ``div`` (FaceRT)."""
        fam = self.family
        allowed = {
            "grad": (Family.NODAL_Q, Family.BROKEN_DG),
            "curl": (Family.EDGE_N,),
            "div": (Family.FACE_RT,),
            "jac": tuple(Family),
        }
        if which not in allowed or fam not in allowed[which]:
            raise ValueError(f"derivative {which!r} not available for {fam.value}")
        _, jac = self.tabulate(ref)
        if which == "grad":
            return jac[..., 0]
        if which == "curl":
            return np.stack([jac[..., 1, 2] - jac[..., 2, 1],
                             jac[..., 2, 0] - jac[..., 0, 2],
                             jac[..., 0, 1] - jac[..., 1, 0]], axis=-1)
        if which == "div":
            return np.trace(jac, axis1=-2, axis2=-1)
        return jac

    # -- gather / scatter --------------------------------------------------

    @cached_property
    def _safe_dofs(self) -> np.ndarray:
        return np.where(self.cell_dofs < 0, self.n_dofs, self.cell_dofs)

    def gather(self, coeffs, cells=None) -> np.ndarray:
        ext = np.append(np.asarray(coeffs, dtype=float), 0.0)
        dofs = self._safe_dofs if cells is None else self._safe_dofs[cells]
        return ext[dofs]

    def scatter(self, local, cells=None) -> np.ndarray:
        """Sum per-cell local contributions ``(ncell, nloc)`` into a global vector."""
        dofs = self._safe_dofs if cells is None else self._safe_dofs[cells]
        out = np.bincount(dofs.ravel(), weights=np.asarray(local).ravel(),
                          minlength=self.n_dofs + 1)
        return out[:self.n_dofs]

    def boundary_mask(self) -> np.ndarray:
        """Boolean mask over the unconstrained numbering: True for removed DOFs."""
        mask = np.ones(self.n_full, dtype=bool)
        mask[self.full_dofs[self.cell_dofs >= 0]] = False
        return mask


def build_space(mesh: StructuredHexMesh, kind: SpaceKind) -> FeSpace:
    return FeSpace(mesh, kind)


def eval_basis(space: FeSpace, cell: int, ref_point, derivative: str | None = None):
    """Values of all local basis functions of ``cell`` at one reference point."""
    ref = np.asarray(ref_point, dtype=float)
    if np.any(ref < -1e-12) or np.any(ref > 1 + 1e-12):
        raise ValueError(f"reference point {ref} outside [0,1]^3")
    vals, _ = space.tabulate(ref[None, :])
    vals = vals[:, 0, :]
    if space.value_dim == 1:
        vals = vals[:, 0]
    if derivative is None:
        return vals
    return vals, space.tabulate_derivative(ref[None, :], derivative)[:, 0]


# -- assembly ---------------------------------------------------------------

def interp_local(local: np.ndarray, table: np.ndarray) -> np.ndarray:
    """``sum_l local[c, l] table[l, ...]`` as one matrix product."""
    n = table.shape[0]
    return (local @ table.reshape(n, -1)).reshape((local.shape[0],) + table.shape[1:])


def pair_local(weights: np.ndarray, values: np.ndarray, table: np.ndarray) -> np.ndarray:
    """``sum_q weights[q] sum_v values[c, q, v...] table[l, q, v...]`` -> ``(ncell, nloc)``."""
    wv = values * weights.reshape((1, -1) + (1,) * (values.ndim - 2))
    return wv.reshape(values.shape[0], -1) @ table.reshape(table.shape[0], -1).T


def field_at(space: FeSpace, coeffs, vals: np.ndarray, cells=None) -> np.ndarray:
    """Field values ``(ncell, nq, vdim)`` from a reference table ``(nloc, nq, vdim)``."""
    return interp_local(space.gather(coeffs, cells), vals)


def field_jac_at(space: FeSpace, coeffs, jac: np.ndarray) -> np.ndarray:
    return interp_local(space.gather(coeffs), jac)


def assemble_matrix(row: FeSpace, col: FeSpace, local: np.ndarray) -> sp.csr_matrix:
    """Global matrix from a shared ``(nr, nc)`` or per-cell ``(ncell, nr, nc)`` local matrix."""
    ncell = row.mesh.n_cells
    local = np.broadcast_to(local, (ncell, row.n_local, col.n_local))
    r = np.broadcast_to(row.cell_dofs[:, :, None], local.shape)
    c = np.broadcast_to(col.cell_dofs[:, None, :], local.shape)
    ok = (r >= 0) & (c >= 0) & (local != 0)
    A = sp.coo_matrix((local[ok], (r[ok], c[ok])), shape=(row.n_dofs, col.n_dofs))
    return A.tocsr()


def local_mass(space: FeSpace, quad: QuadratureRule) -> np.ndarray:
    vals, _ = space.tabulate(quad.points)
    w = quad.weights * space.mesh.cell_volume
    return np.einsum("q,iqv,jqv->ij", w, vals, vals)


def mass_matrix(space: FeSpace, quad: QuadratureRule | None = None) -> sp.csr_matrix:
    quad = quad or default_quadrature()
    M = assemble_matrix(space, space, local_mass(space, quad))
    return ((M + M.T) * 0.5).tocsr()


def assemble_load(space: FeSpace, values: np.ndarray, quad: QuadratureRule) -> np.ndarray:
    """``int f . v_i`` for f given at quadrature points ``(ncell, nq[, vdim])``."""
    vals, _ = space.tabulate(quad.points)
    f = values if values.ndim == 3 else values[..., None]
    w = quad.weights * space.mesh.cell_volume
    return space.scatter(pair_local(w, f, vals))


def quadrature_points(mesh: StructuredHexMesh, quad: QuadratureRule) -> np.ndarray:
    """Physical quadrature points ``(ncell, nq, 3)``."""
    return mesh.all_cell_origins()[:, None, :] + quad.points[None, :, :] * mesh.h


def l2_project(space: FeSpace, f, quad: QuadratureRule | None = None,
               mass: sp.spmatrix | None = None, cg: CgConfig | None = None,
               t: float | None = None) -> np.ndarray:
    """L2 projection of a point function ``f(x)`` (``x`` shaped ``(..., 3)``)."""
    quad = quad or default_quadrature()
    x = quadrature_points(space.mesh, quad)
    values = np.asarray(f(x) if t is None else f(t, x), dtype=float)
    if space.value_dim == 1 and values.ndim == 3 and values.shape[-1] == 1:
        values = values[..., 0]
    values = np.broadcast_to(values, x.shape[:2] + ((3,) if space.value_dim == 3 else ()))
    load = assemble_load(space, values, quad)
    M = mass if mass is not None else mass_matrix(space, quad)
    return cg_solve(M, load, cg)


def eval_field(space: FeSpace, coeffs, x) -> np.ndarray:
    """Point evaluation at ``x`` (one point or ``(npts, 3)``)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    cells, ref, inside = space.mesh.locate_points(np.atleast_2d(x))
    if not np.all(inside):
        raise ValueError("evaluation point outside the domain")
    out = eval_in_cells(space, coeffs, cells, ref)
    if space.value_dim == 1:
        out = out[:, 0]
    return out[0] if single else out


def eval_in_cells(space: FeSpace, coeffs, cells, ref) -> np.ndarray:
    """Values ``(npts, vdim)`` at per-point reference coordinates in given cells."""
    vals, _ = space.tabulate(ref)
    return np.einsum("pl,lpv->pv", space.gather(coeffs, cells), vals)


def interpolate_face_flux(space: FeSpace, f, npts: int = 10, t: float | None = None) -> np.ndarray:
    """Canonical FaceRT interpolant: DOF = flux of ``f`` through each face.

    A high-order face rule keeps the discrete divergence of a solenoidal field
    at round-off level.
    """
    if space.family != Family.FACE_RT:
        raise ValueError("face-flux interpolation needs a FaceRT space")
    mesh = space.mesh
    coeffs = np.zeros(space.n_dofs)
    origins = mesh.all_cell_origins()
    for loc, (_, off, d) in enumerate(space.layout):
        p, q = [e for e in range(3) if e != d]
        rule = face_rule(npts, d, float(off[d]))
        x = origins[:, None, :] + rule.points[None, :, :] * mesh.h
        vals = np.asarray(f(x) if t is None else f(t, x))[..., d]
        flux = vals @ rule.weights * mesh.h[p] * mesh.h[q]
        dofs = space.cell_dofs[:, loc]
        ok = dofs >= 0
        coeffs[dofs[ok]] = flux[ok]
    return coeffs
