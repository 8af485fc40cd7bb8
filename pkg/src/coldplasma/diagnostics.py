"""Conserved quantities and constraint residuals."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fespace import pair_local
from .particles import ParticleSet, gamma, lorentz_force, sample_fields, velocity
from .semidiscrete import Discretization, FieldState, fluid_energy_density


def total_mass(disc: Discretization, state: FieldState, particles: ParticleSet | None = None) -> float:
    """``(1/m) int rho + sum of active particle weights``."""
    fluid = float((disc.mass_rho @ state.rho).sum()) / disc.constants.m
    return fluid + (particles.active_mass() if particles is not None else 0.0)


def fluid_energy(disc: Discretization, state: FieldState) -> float:
    rho_q = disc.rho_at_qp(state.rho)
    disc.check_density(rho_q)
    dens = fluid_energy_density(rho_q, disc.M_at_qp(state.M), disc.constants.c)
    return float(np.einsum("q,cq->", disc.wq, dens))


def particle_energy(disc: Discretization, particles: ParticleSet | None) -> float:
    """``sum w (gamma - 1) m c^2`` over active particles, cancellation-free."""
    if particles is None or not particles.active.any():
        return 0.0
    a = particles.active
    m, c = particles.m, disc.constants.c
    U = particles.U[a]
    g = gamma(U, m, c)
    gm1 = np.sum(U * U, axis=1) / (m * m * c * c) / (g + 1.0)
    return float(np.sum(particles.w[a] * gm1)) * m * c * c


def field_energy(disc: Discretization, state: FieldState) -> float:
    seq = disc.seq
    return float(state.E @ (seq.mass_N @ state.E) + state.B @ (seq.mass_RT @ state.B)) / (8 * np.pi)


def total_energy(disc: Discretization, state: FieldState, particles: ParticleSet | None = None) -> float:
    return fluid_energy(disc, state) + particle_energy(disc, particles) + field_energy(disc, state)


def gauss_residual(disc: Discretization, state: FieldState, particles: ParticleSet | None = None) -> float:
    """Max over the constrained nodal basis of the weak Gauss-law residual."""
    r = disc.gauss_residual_vector(state, particles)
    return float(np.abs(r).max()) if r.size else 0.0


def divB_norm(disc: Discretization, state: FieldState) -> float:
    seq = disc.seq
    d = seq.D @ state.B
    return float(np.sqrt(max(d @ (seq.mass_DG @ d), 0.0)))


@dataclass
class ConservationReport:
    """Time series of the monitored quantities plus relative errors against t=0."""
    t: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    gauss_inf: list = field(default_factory=list)
    divB_L2: list = field(default_factory=list)
    removed_mass: list = field(default_factory=list)

    def record(self, disc, t, state, particles=None):
        self.t.append(float(t))
        self.mass.append(total_mass(disc, state, particles))
        self.energy.append(total_energy(disc, state, particles))
        self.gauss_inf.append(gauss_residual(disc, state, particles))
        self.divB_L2.append(divB_norm(disc, state))
        self.removed_mass.append(particles.removed_mass() if particles is not None else 0.0)

    @staticmethod
    def _rel(series):
        s = np.asarray(series, dtype=float)
        ref = s[0] if s.size and s[0] != 0 else 1.0
        return (s - s[0]) / ref

    @property
    def mass_rel_err(self) -> np.ndarray:
        return self._rel(self.mass)

    @property
    def energy_rel_err(self) -> np.ndarray:
        return self._rel(self.energy)

    def rows(self):
        mr, er = self.mass_rel_err, self.energy_rel_err
        for i in range(len(self.t)):
            yield (self.t[i], mr[i], er[i], self.gauss_inf[i], self.divB_L2[i], self.removed_mass[i])


def conservation_rates(disc: Discretization, state: FieldState,
                       particles: ParticleSet | None = None) -> dict:
    """Instantaneous rates of the invariants under the semi-discrete dynamics.

    ``dH_dt`` pairs every rate with the matching energy derivative
    (``c^2 P``, ``w``, ``E/4pi``, ``B/4pi``, particle velocity); ``scale`` is
    the largest of those pairings so the cancellation can be judged.  The
    Gauss rate uses nodal gradients at the particles directly rather than the
    deposited current.
    """
    k = disc.constants
    r = disc.rates(state, particles)
    seq = disc.seq
    w = disc.velocity_projection(state)
    P = disc.kinetic_potential_projection(state)
    terms = [k.c * k.c * P @ (disc.mass_rho @ r.rho), w @ (disc.mass_M @ r.M),
             r.E @ (seq.mass_N @ state.E) / (4 * np.pi), r.B @ (seq.mass_RT @ state.B) / (4 * np.pi)]
    fluid_charge_rate = seq.Q.scatter(pair_local(disc.wq, disc.rho_at_qp(r.rho) / k.m, disc.Q0_vals))
    particle_charge_rate = np.zeros(seq.Q.n_dofs)
    if particles is not None and particles.active.any():
        a = particles.active
        X, U, wp = particles.X[a], particles.U[a], particles.w[a]
        Ep, Bp = sample_fields(particles, seq.N, state.E, seq.RT, state.B)
        V = velocity(U, particles.m, k.c)
        Udot = lorentz_force(U, Ep[a], Bp[a], particles.m, particles.e, k.c)
        terms.append(float(np.sum(wp * np.sum(V * Udot, axis=1))))
        cells, ref, _ = disc.mesh.locate_points(X)
        grads = seq.Q.tabulate_derivative(ref, "grad")          # (nloc, npart, 3)
        local = np.einsum("p,pd,lpd->pl", wp, V, grads)
        particle_charge_rate = seq.Q.scatter(local, cells)
    gauss_rate = -(seq.G.T @ (seq.mass_N @ r.E)) \
        - 4 * np.pi * k.e * (fluid_charge_rate + particle_charge_rate)
    return {
        "dH_dt": float(sum(terms)),
        "scale": float(max(abs(t) for t in terms)),
        "mass_rate": float((disc.mass_rho @ r.rho).sum()) / k.m,
        "gauss_rate": float(np.abs(gauss_rate).max()) if gauss_rate.size else 0.0,
        "divB_rate": float(np.abs(seq.D @ r.B).max()),
    }
