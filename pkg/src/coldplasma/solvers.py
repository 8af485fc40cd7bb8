"""Sparse linear algebra: Jacobi-preconditioned CG, Poisson operator, Gauss cleaning."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class CgConfig:
    rel_tol: float = 1e-12
    abs_tol: float = 0.0
    max_iter: int = 10_000

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol < 0:
            raise ValueError("CG tolerances must be positive")


DEFAULT_CG = CgConfig()


def cg_solve(A, b, config: CgConfig | None = None, x0=None, stats: dict | None = None) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive (semi)definite ``A``.

    Stops when ``||b - A x|| <= max(rel_tol * ||b||, abs_tol)``.  The Jacobi
    preconditioner is the inverse diagonal of ``A``.
    """
    cfg = config or DEFAULT_CG
    b = np.asarray(b, dtype=float)
    diag = A.diagonal() if sp.issparse(A) else np.diag(A)
    if np.any(diag <= 0):
        raise SolverError("non-positive diagonal entry, matrix is not SPD")
    inv_diag = 1.0 / diag
    bnorm = np.linalg.norm(b)
    target = max(cfg.rel_tol * bnorm, cfg.abs_tol)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    if bnorm == 0.0:
        if stats is not None:
            stats["iterations"] = 0
        return np.zeros_like(b)
    r = b - A @ x
    rnorm = np.linalg.norm(r)
    it = 0
    if rnorm > target:
        z = inv_diag * r
        p = z.copy()
        rz = r @ z
        for it in range(1, cfg.max_iter + 1):
            Ap = A @ p
            curv = p @ Ap
            if curv <= 0:
                raise SolverError("negative curvature encountered", rnorm / bnorm, it)
            alpha = rz / curv
            x += alpha * p
            r -= alpha * Ap
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                break
            z = inv_diag * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        else:
            raise SolverError("CG did not converge", rnorm / bnorm, cfg.max_iter)
    if stats is not None:
        stats["iterations"] = it
        stats["residual"] = rnorm / bnorm
    return x


class MassSolver:
    """Repeated solves against one SPD matrix, warm-started from the last answer."""

    def __init__(self, A, config: CgConfig | None = None):
        self.A = sp.csr_matrix(A)
        self.config = config or DEFAULT_CG
        self._last = None
        self.iterations = 0

    def __call__(self, b) -> np.ndarray:
        stats = {}
        x0 = self._last if self._last is not None and self._last.shape == np.shape(b) else None
        x = cg_solve(self.A, b, self.config, x0=x0, stats=stats)
        self.iterations += stats.get("iterations", 0)
        self._last = x
        return x


def stiffness_matrix_Q(space, quad=None) -> sp.csr_matrix:
    """``int grad(phi_i) . grad(phi_j)`` on a NodalQ space, by direct quadrature."""
    from .fespace import Family, assemble_matrix, default_quadrature

    if space.family != Family.NODAL_Q:
        raise ValueError("stiffness matrix needs a NodalQ space")
    quad = quad or default_quadrature()
    grads = space.tabulate_derivative(quad.points, "grad")
    w = quad.weights * space.mesh.cell_volume
    local = np.einsum("q,iqd,jqd->ij", w, grads, grads)
    K = assemble_matrix(space, space, local)
    return ((K + K.T) * 0.5).tocsr()


def gauss_clean(E, charge_load, G, mass_N, stiffness=None, config: CgConfig | None = None):
    """Project ``E`` onto the fields satisfying the weak Gauss law.

    ``charge_load[i] = int f phi_i`` over the constrained NodalQ basis, where
    ``f`` is the prescribed divergence.  Two Poisson solves give potentials
    ``a`` (divergence currently carried by ``E``) and ``b`` (target
    divergence); the result is ``E - grad a + grad b``.
    """
    K = stiffness if stiffness is not None else (G.T @ mass_N @ G).tocsr()
    a = cg_solve(K, G.T @ (mass_N @ E), config)
    b = cg_solve(K, -np.asarray(charge_load, dtype=float), config)
    return E - G @ a + G @ b
