"""Semi-discrete cold-plasma/Maxwell/particle right-hand sides.

Two spatial discretizations share the Maxwell part (E in constrained EdgeN,
B in constrained FaceRT):

* ``FLUX_FREE``: rho continuous trilinear, M and the velocity closure in
  continuous vector trilinears with zero normal component on the boundary.
* ``DG_FLUX``: rho discontinuous trilinear, M and the velocity closure in
  constrained FaceRT, coupled across faces by upwind fluxes.

All volume integrals use the 27-point Gauss rule and face integrals the
matching 9-point rule.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .derham import SequenceOperators, build_sequence
from .fespace import (interp_local, pair_local, Family, SpaceKind, build_space, default_quadrature, face_rule,
                      mass_matrix, quadrature_points)
from .mesh import StructuredHexMesh
from .particles import ParticleSet, deposit_point_current, gamma, point_charge_load
from .solvers import CgConfig, MassSolver

RHO_FLOOR = 1e-12


class Formulation(str, Enum):
    FLUX_FREE = "fluxfree"
    DG_FLUX = "dgflux"


class FluidStateError(ValueError):
    """Raised when the density is not positive at a quadrature point."""


@dataclass(frozen=True)
class PhysConstants:
    c: float = 1.0
    m: float = 1.0
    e: float = -1.0
    n0: float = 0.0

    def __post_init__(self):
        if self.c <= 0 or self.m <= 0:
            raise ValueError("c and m must be positive")


@dataclass
class FieldState:
    rho: np.ndarray
    M: np.ndarray
    E: np.ndarray
    B: np.ndarray
    formulation: Formulation

    def copy(self) -> "FieldState":
        return replace(self, rho=self.rho.copy(), M=self.M.copy(), E=self.E.copy(), B=self.B.copy())

    def axpy(self, a: float, other: "FieldState") -> "FieldState":
        """``self + a * other``."""
        return replace(self, rho=self.rho + a * other.rho, M=self.M + a * other.M,
                       E=self.E + a * other.E, B=self.B + a * other.B)

    def scaled(self, a: float) -> "FieldState":
        return replace(self, rho=a * self.rho, M=a * self.M, E=a * self.E, B=a * self.B)


def upwind_flux(g1, g2, mn):
    """Upwind value: side 1 if ``mn > 0``, side 2 if ``mn < 0``, average if ``mn == 0``."""
    s = np.sign(mn)
    return 0.5 * (g1 + g2) + 0.5 * s * (np.asarray(g1) - np.asarray(g2))


def fluid_closures(rho_q, M_q, c: float):
    """Pointwise velocity ``M/(rho gamma)`` and kinetic potential.

    The potential ``gamma - 1 - |M|^2/(rho^2 c^2 gamma)`` equals
    ``-q/(gamma (gamma + 1))`` with ``q = |M|^2/(rho c)^2``, which is free
    of cancellation for small momenta.
    """
    q = np.sum(M_q * M_q, axis=-1) / (rho_q * rho_q * c * c)
    g = np.sqrt(1.0 + q)
    v = M_q / (rho_q * g)[..., None]
    P = -q / (g * (g + 1.0))
    return v, P


def fluid_energy_density(rho_q, M_q, c: float):
    """``rho (gamma - 1) c^2`` written as ``|M|^2 / (rho (gamma + 1))``."""
    q2 = np.sum(M_q * M_q, axis=-1)
    g = np.sqrt(1.0 + q2 / (rho_q * rho_q * c * c))
    return q2 / (rho_q * (g + 1.0))


class _FaceTables:
    def __init__(self, axis, cells1, cells2, rule1, rule0, area):
        self.axis = axis
        self.cells1 = cells1
        self.cells2 = cells2
        self.rule1 = rule1
        self.rule0 = rule0
        self.weights = rule1.weights * area


class Discretization:
    """Spaces, matrices and quadrature tables for one mesh and formulation."""

    def __init__(self, mesh: StructuredHexMesh, formulation: Formulation = Formulation.FLUX_FREE,
                 constants: PhysConstants | None = None, cg: CgConfig | None = None, k: int = 0):
        self.mesh = mesh
        self.formulation = Formulation(formulation)
        self.constants = constants or PhysConstants()
        self.cg = cg or CgConfig()
        self.seq: SequenceOperators = build_sequence(mesh, k, True, self.cg)
        if self.formulation == Formulation.FLUX_FREE:
            self.rho_space = build_space(mesh, SpaceKind(Family.NODAL_Q, k, False))
            self.M_space = build_space(mesh, SpaceKind(Family.VECTOR_Q, k, True))
        else:
            self.rho_space = build_space(mesh, SpaceKind(Family.BROKEN_DG, k, False))
            self.M_space = build_space(mesh, SpaceKind(Family.FACE_RT, k, True))
        self.quad = default_quadrature(k)
        self.mass_rho = mass_matrix(self.rho_space, self.quad)
        self.mass_M = mass_matrix(self.M_space, self.quad)
        self.solve_rho = MassSolver(self.mass_rho, self.cg)
        self.solve_M = MassSolver(self.mass_M, self.cg)
        self.solve_w = MassSolver(self.mass_M, self.cg)
        self.solve_P = MassSolver(self.mass_rho, self.cg)
        self.solve_N = MassSolver(self.seq.mass_N, self.cg)
        self.solve_RT = MassSolver(self.seq.mass_RT, self.cg)

        q = self.quad
        self.wq = q.weights * mesh.cell_volume
        rv, rj = self.rho_space.tabulate(q.points)
        self.rho_vals = rv[..., 0]
        self.rho_grad = rj[..., 0]
        self.M_vals, self.M_jac = self.M_space.tabulate(q.points)
        self.N_vals, _ = self.seq.N.tabulate(q.points)
        self.RT_vals, _ = self.seq.RT.tabulate(q.points)
        self.Q0_vals = self.seq.Q.tabulate(q.points)[0][..., 0]
        self.faces = []
        if self.formulation == Formulation.DG_FLUX:
            for axis in range(3):
                c1, c2 = mesh.interior_faces(axis)
                if len(c1) == 0:
                    continue
                p, r = [d for d in range(3) if d != axis]
                self.faces.append(_FaceTables(axis, c1, c2, face_rule(k + 3, axis, 1.0),
                                              face_rule(k + 3, axis, 0.0), mesh.h[p] * mesh.h[r]))
            for f in self.faces:
                f.rho1 = self.rho_space.tabulate(f.rule1.points)[0][..., 0]
                f.rho0 = self.rho_space.tabulate(f.rule0.points)[0][..., 0]
                f.M1 = self.M_space.tabulate(f.rule1.points)[0]
                f.M0 = self.M_space.tabulate(f.rule0.points)[0]

    # -- bookkeeping ---------------------------------------------------------

    @property
    def N(self):
        return self.seq.N

    @property
    def RT(self):
        return self.seq.RT

    def zero_state(self) -> FieldState:
        return FieldState(np.zeros(self.rho_space.n_dofs), np.zeros(self.M_space.n_dofs),
                          np.zeros(self.N.n_dofs), np.zeros(self.RT.n_dofs), self.formulation)

    def dof_counts(self) -> dict:
        return {"rho": self.rho_space.n_dofs, "M": self.M_space.n_dofs,
                "E": self.N.n_dofs, "B": self.RT.n_dofs, "Q0": self.seq.Q.n_dofs}

    def check_state(self, state: FieldState) -> None:
        if state.formulation != self.formulation:
            raise ValueError(f"state is {state.formulation.value}, discretization is "
                             f"{self.formulation.value}")

    # -- quadrature-point values ----------------------------------------------

    def rho_at_qp(self, rho) -> np.ndarray:
        return self.rho_space.gather(rho) @ self.rho_vals

    def M_at_qp(self, M) -> np.ndarray:
        return interp_local(self.M_space.gather(M), self.M_vals)

    def M_jac_at_qp(self, M) -> np.ndarray:
        return interp_local(self.M_space.gather(M), self.M_jac)

    def rho_grad_at_qp(self, rho) -> np.ndarray:
        return interp_local(self.rho_space.gather(rho), self.rho_grad)

    def E_at_qp(self, E) -> np.ndarray:
        return interp_local(self.N.gather(E), self.N_vals)

    def B_at_qp(self, B) -> np.ndarray:
        return interp_local(self.RT.gather(B), self.RT_vals)

    def check_density(self, rho_q) -> None:
        bad = rho_q <= RHO_FLOOR
        if np.any(bad):
            cell = int(np.nonzero(bad.any(axis=1))[0][0])
            raise FluidStateError(f"density {rho_q[bad].min():.3e} below floor in cell {cell}")

    def closures_at_qp(self, rho, M):
        rho_q = self.rho_at_qp(rho)
        self.check_density(rho_q)
        return fluid_closures(rho_q, self.M_at_qp(M), self.constants.c)

    # -- projections ------------------------------------------------------------

    def project_vector(self, v_q) -> np.ndarray:
        """L2 projection of quadrature values onto the momentum space."""
        local = pair_local(self.wq, v_q, self.M_vals)
        return self.solve_w(self.M_space.scatter(local))

    def project_scalar(self, f_q) -> np.ndarray:
        """L2 projection of quadrature values onto the density space."""
        local = pair_local(self.wq, f_q, self.rho_vals)
        return self.solve_P(self.rho_space.scatter(local))

    def velocity_projection(self, state: FieldState) -> np.ndarray:
        v, _ = self.closures_at_qp(state.rho, state.M)
        return self.project_vector(v)

    def kinetic_potential_projection(self, state: FieldState) -> np.ndarray:
        _, P = self.closures_at_qp(state.rho, state.M)
        return self.project_scalar(P)

    def max_wave_speed(self, state: FieldState) -> float:
        v, _ = self.closures_at_qp(state.rho, state.M)
        return float(np.abs(v).max()) if v.size else 0.0

    # -- loads --------------------------------------------------------------------

    def fluid_loads(self, rho, M, E, B, w, P, M_sign=None, rho_face=None):
        """Right-hand side vectors of the fluid equations and the fluid current.

        ``rho, M, E, B`` are the (possibly time-averaged) coefficient vectors
        entering the bilinear forms, ``w`` and ``P`` the projected closures.
        ``M_sign`` selects the momentum used for upwinding and ``rho_face``
        the density inside face fluxes (both default to the volume values).
        Returns ``(L_rho, L_M, J)`` with ``J[i] = int rho w . nu_i``.
        """
        c, m, e = self.constants.c, self.constants.m, self.constants.e
        rho_q = self.rho_at_qp(rho)
        M_q = self.M_at_qp(M)
        E_q = self.E_at_qp(E)
        B_q = self.B_at_qp(B)
        w_q = self.M_at_qp(w)
        w_jac = self.M_jac_at_qp(w)
        gradP = self.rho_grad_at_qp(P)
        W = self.wq
        rw = rho_q[..., None] * w_q

        L_rho = pair_local(W, rw, self.rho_grad)

        # (w . grad mu_l) . M  -  (mu_l . grad w) . M
        wM = w_q[..., :, None] * M_q[..., None, :]
        JwM = np.einsum("cqjk,cqk->cqj", w_jac, M_q)
        force = (e / m) * rho_q[..., None] * (E_q + np.cross(w_q, B_q) / c) \
            - c * c * rho_q[..., None] * gradP
        L_M = pair_local(W, wM, self.M_jac) + pair_local(W, force - JwM, self.M_vals)

        J = pair_local(W, rw, self.N_vals)

        L_rho = self.rho_space.scatter(L_rho)
        L_M = self.M_space.scatter(L_M)
        J = self.N.scatter(J)
        if self.formulation == Formulation.DG_FLUX:
            fr, fm = self._face_loads(rho if rho_face is None else rho_face,
                                      M if M_sign is None else M_sign, M, w, P)
            L_rho += fr
            L_M += fm
        return L_rho, L_M, J

    def _face_loads(self, rho, M_sign, M, w, P):
        c = self.constants.c
        Lr = np.zeros(self.rho_space.n_dofs)
        Lm = np.zeros(self.M_space.n_dofs)
        rs, ms = self.rho_space, self.M_space
        for f in self.faces:
            a = f.axis
            n = np.zeros(3)
            n[a] = 1.0
            c1, c2 = f.cells1, f.cells2
            r1 = rs.gather(rho, c1) @ f.rho1
            r2 = rs.gather(rho, c2) @ f.rho0
            P1 = rs.gather(P, c1) @ f.rho1
            P2 = rs.gather(P, c2) @ f.rho0
            M1 = interp_local(ms.gather(M, c1), f.M1)
            M2 = interp_local(ms.gather(M, c2), f.M0)
            w1 = interp_local(ms.gather(w, c1), f.M1)
            w2 = interp_local(ms.gather(w, c2), f.M0)
            Ms1 = ms.gather(M_sign, c1) @ f.M1[..., a]
            Ms2 = ms.gather(M_sign, c2) @ f.M0[..., a]
            s = np.sign(0.5 * (Ms1 + Ms2))
            up1 = 0.5 * (1.0 + s)
            up2 = 0.5 * (1.0 - s)
            W = f.weights

            # density: -(rho w)* . n (phi^1 - phi^2)
            flux = up1 * r1 * w1[..., a] + up2 * r2 * w2[..., a]
            Lr += rs.scatter(-pair_local(W, flux, f.rho1), c1)
            Lr += rs.scatter(pair_local(W, flux, f.rho0), c2)

            # momentum, potential jump: c^2 (rho mu)* . n (P^1 - P^2)
            dP = c * c * (P1 - P2)
            Lm += ms.scatter(pair_local(W, up1 * r1 * dP, f.M1[..., a]), c1)
            Lm += ms.scatter(pair_local(W, up2 * r2 * dP, f.M0[..., a]), c2)

            # momentum, transport: (n x M)* . (mu^1 x w^1 - mu^2 x w^2)
            Mstar = 0.5 * (M1 + M2) + 0.5 * s[..., None] * (M1 - M2)
            nM = np.cross(n, Mstar)
            g1 = np.cross(w1, nM)
            g2 = np.cross(w2, nM)
            Lm += ms.scatter(pair_local(W, g1, f.M1), c1)
            Lm += ms.scatter(-pair_local(W, g2, f.M0), c2)
        return Lr, Lm

    def maxwell_loads(self, E, B):
        """``(c C^T M_RT B, -c C E)``: curl parts of the E and B rates.

        The B rate is returned directly as coefficients (no mass solve needed).
        """
        c = self.constants.c
        return c * (self.seq.C.T @ (self.seq.mass_RT @ B)), -c * (self.seq.C @ E)

    # -- rates ------------------------------------------------------------------------

    def rates(self, state: FieldState, particles: ParticleSet | None = None,
              sources=None, t: float = 0.0) -> FieldState:
        """Time derivatives of all field coefficients.

        ``sources`` (optional) maps ``t`` to load vectors
        ``(S_rho, S_M, S_E, S_B_coeffs)`` added to the right-hand sides.
        """
        self.check_state(state)
        c, m, e = self.constants.c, self.constants.m, self.constants.e
        v_q, P_q = self.closures_at_qp(state.rho, state.M)
        w = self.project_vector(v_q)
        P = self.project_scalar(P_q)
        L_rho, L_M, J = self.fluid_loads(state.rho, state.M, state.E, state.B, w, P)
        curlB, B_dot = self.maxwell_loads(state.E, state.B)
        L_E = curlB - (4 * np.pi * e / m) * J
        if particles is not None and len(particles):
            L_E -= (4 * np.pi * e / m) * deposit_point_current(particles, self.N, c)
        if sources is not None:
            s_rho, s_M, s_E, s_B = sources(t)
            L_rho = L_rho + s_rho
            L_M = L_M + s_M
            L_E = L_E + s_E
            B_dot = B_dot + s_B
        return FieldState(self.solve_rho(L_rho), self.solve_M(L_M), self.solve_N(L_E), B_dot,
                          self.formulation)

    # -- Gauss law pieces ---------------------------------------------------------

    def charge_load(self, rho, particles: ParticleSet | None = None, X=None) -> np.ndarray:
        """``4 pi e [ (1/m) int rho phi_i + sum_k w_k phi_i(X_k) - n0 int phi_i ]`` over Q0."""
        m, e, n0 = self.constants.m, self.constants.e, self.constants.n0
        rho_q = self.rho_at_qp(rho)
        Q = self.seq.Q
        dens = rho_q / m - n0
        load = Q.scatter(pair_local(self.wq, dens, self.Q0_vals))
        if particles is not None and len(particles):
            load = load + point_charge_load(particles, Q, X)
        return 4 * np.pi * e * load

    def gauss_residual_vector(self, state: FieldState, particles=None) -> np.ndarray:
        return -(self.seq.G.T @ (self.seq.mass_N @ state.E)) - self.charge_load(state.rho, particles)

    def quadrature_points(self) -> np.ndarray:
        return quadrature_points(self.mesh, self.quad)


def fluxfree_rhs(disc: Discretization, state: FieldState, particles=None) -> FieldState:
    if disc.formulation != Formulation.FLUX_FREE:
        raise ValueError("fluxfree_rhs needs a flux-free discretization")
    return disc.rates(state, particles)


def dgflux_rhs(disc: Discretization, state: FieldState, particles=None) -> FieldState:
    if disc.formulation != Formulation.DG_FLUX:
        raise ValueError("dgflux_rhs needs a DG-flux discretization")
    return disc.rates(state, particles)


__all__ = ["Discretization", "FieldState", "Formulation", "FluidStateError", "PhysConstants",
           "dgflux_rhs", "fluid_closures", "fluid_energy_density", "fluxfree_rhs", "gamma",
           "upwind_flux", "RHO_FLOOR"]
