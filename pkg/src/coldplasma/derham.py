"""Discrete de Rham sequence Q -> N -> RT -> DG0 and the weak adjoint operators.

The incidence matrices are derived by projecting the derivative of each local
source basis function onto the local target space and rounding the result to
the integer incidence pattern (scaled by the cell volume for the divergence).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fespace import (Family, FeSpace, SpaceKind, build_space, default_quadrature,
                      local_mass, mass_matrix)
from .mesh import StructuredHexMesh
from .solvers import CgConfig, MassSolver


def _local_derivative_matrix(src: FeSpace, dst: FeSpace, which: str) -> np.ndarray:
    quad = default_quadrature()
    dvals = src.tabulate_derivative(quad.points, which)
    if dvals.ndim == 2:
        dvals = dvals[..., None]
    tvals, _ = dst.tabulate(quad.points)
    w = quad.weights * src.mesh.cell_volume
    rhs = np.einsum("q,iqv,jqv->ij", w, tvals, dvals)
    return np.linalg.solve(local_mass(dst, quad), rhs)


def _assemble_incidence(src: FeSpace, dst: FeSpace, local: np.ndarray) -> sp.csr_matrix:
    """Global operator from identical per-cell local operators.

    For each local row, columns sharing a global DOF are summed first (this
    happens on one-cell periodic directions); every (cell, local row)
    occurrence of a global row then carries the same value by conformity,
    so occurrences are averaged.
    """
    ncell = src.mesh.n_cells
    rows = np.broadcast_to(dst.cell_dofs[:, :, None], (ncell, dst.n_local, src.n_local))
    cols = np.broadcast_to(src.cell_dofs[:, None, :], rows.shape)
    vals = np.broadcast_to(local, rows.shape)
    occ = np.broadcast_to((np.arange(ncell)[:, None] * dst.n_local
                           + np.arange(dst.n_local)[None, :])[:, :, None], rows.shape)
    ok = (rows >= 0) & (cols >= 0)
    r, c, v, k = rows[ok], cols[ok], vals[ok], occ[ok]
    key = r * src.n_dofs + c
    # sum within each local row
    ck, inv = np.unique(np.stack([k, key]), axis=1, return_inverse=True)
    inv = np.ravel(inv)
    per_cell = np.bincount(inv, weights=v, minlength=ck.shape[1])
    # average over row occurrences
    uk, inv2 = np.unique(ck[1], return_inverse=True)
    inv2 = np.ravel(inv2)
    total = np.bincount(inv2, weights=per_cell)
    count = np.bincount(inv2)
    val = total / count
    keep = val != 0.0
    A = sp.coo_matrix((val[keep], (uk[keep] // src.n_dofs, uk[keep] % src.n_dofs)),
                      shape=(dst.n_dofs, src.n_dofs))
    return A.tocsr()


@dataclass
class SequenceOperators:
    Q: FeSpace
    N: FeSpace
    RT: FeSpace
    DG: FeSpace
    G: sp.csr_matrix
    C: sp.csr_matrix
    D: sp.csr_matrix
    mass_Q: sp.csr_matrix
    mass_N: sp.csr_matrix
    mass_RT: sp.csr_matrix
    mass_DG: sp.csr_matrix
    cg: CgConfig

    def __post_init__(self):
        self._solve_Q = MassSolver(self.mass_Q, self.cg)
        self._solve_RT = MassSolver(self.mass_RT, self.cg)

    def weak_divergence(self, E) -> np.ndarray:
        """Coefficients in Q of ``div_w E``: ``M_Q d = -G^T M_N E``."""
        return self._solve_Q(-(self.G.T @ (self.mass_N @ E)))

    def weak_gradient(self, phi) -> np.ndarray:
        """Coefficients in RT of ``grad_w phi``: ``M_RT g = -D^T M_DG phi``."""
        phi = np.asarray(phi, dtype=float)
        phi = phi - (self.mass_DG @ phi).sum() / self.mass_DG.sum()
        return self._solve_RT(-(self.D.T @ (self.mass_DG @ phi)))


def _check_compatible(spaces, expected):
    mesh = spaces[0].mesh
    for s, fam in zip(spaces, expected):
        if s.mesh is not mesh and s.mesh != mesh:
            raise ValueError("spaces live on different meshes")
        if s.family != fam:
            raise ValueError(f"expected a {fam.value} space, got {s.family.value}")


def gradient_matrix(Q: FeSpace, N: FeSpace) -> sp.csr_matrix:
    _check_compatible([Q, N], [Family.NODAL_Q, Family.EDGE_N])
    return _assemble_incidence(Q, N, np.rint(_local_derivative_matrix(Q, N, "grad")))


def curl_matrix(N: FeSpace, RT: FeSpace) -> sp.csr_matrix:
    _check_compatible([N, RT], [Family.EDGE_N, Family.FACE_RT])
    return _assemble_incidence(N, RT, np.rint(_local_derivative_matrix(N, RT, "curl")))


def divergence_matrix(RT: FeSpace, DG: FeSpace) -> sp.csr_matrix:
    _check_compatible([RT, DG], [Family.FACE_RT, Family.BROKEN_DG])
    vol = RT.mesh.cell_volume
    local = np.rint(_local_derivative_matrix(RT, DG, "div") * vol) / vol
    return _assemble_incidence(RT, DG, local)


def build_sequence(mesh: StructuredHexMesh, k: int = 0, constrained: bool = True,
                   cg: CgConfig | None = None) -> SequenceOperators:
    Q = build_space(mesh, SpaceKind(Family.NODAL_Q, k, constrained))
    N = build_space(mesh, SpaceKind(Family.EDGE_N, k, constrained))
    RT = build_space(mesh, SpaceKind(Family.FACE_RT, k, constrained))
    DG = build_space(mesh, SpaceKind(Family.BROKEN_DG, k - 1, False))
    return SequenceOperators(
        Q, N, RT, DG,
        gradient_matrix(Q, N), curl_matrix(N, RT), divergence_matrix(RT, DG),
        mass_matrix(Q), mass_matrix(N), mass_matrix(RT), mass_matrix(DG),
        cg or CgConfig(),
    )
