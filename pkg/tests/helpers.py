"""Shared builders for the test suite."""
import numpy as np

from coldplasma.mesh import build_mesh
from coldplasma.particles import ParticleSet, point_charge_load, segment_and_build_D, segmented_current
from coldplasma.semidiscrete import Discretization, PhysConstants


def random_state(disc, rng, n_particles=20, rho_mean=2.0):
    """Positive density, random momentum and fields, particles inside the box."""
    st = disc.zero_state()
    st.rho = rho_mean + 0.3 * rng.standard_normal(st.rho.shape)
    st.M = 0.5 * rng.standard_normal(st.M.shape)
    st.E = rng.standard_normal(st.E.shape)
    st.B = rng.standard_normal(st.B.shape)
    k = disc.constants
    lo, hi = disc.mesh.lower, disc.mesh.upper
    X = rng.uniform(lo + 0.01, hi - 0.01, (n_particles, 3))
    ps = ParticleSet(X, rng.standard_normal((n_particles, 3)), rng.uniform(0.1, 1.0, n_particles),
                     m=k.m, e=k.e)
    return st, ps


def small_disc(formulation="fluxfree", periodic=(False, False, False), shape=(3, 3, 4),
               constants=PhysConstants(c=2.0, m=1.3, e=-0.7, n0=0.5)):
    mesh = build_mesh([-1, -1, -1], [1, 1, 1], shape, periodic)
    return Discretization(mesh, formulation, constants)


def charge_balance_residual(seq, X0, X1, w, dt):
    """``G^T J dt - (sum w phi(X1) - sum w phi(X0))`` over the constrained nodal basis."""
    path = segment_and_build_D(seq.N.mesh, X0, X1)
    J = segmented_current(w, path, seq.N, dt)
    ps = ParticleSet(seq.Q.mesh.wrap(X1), np.zeros_like(X1), w)
    dq = point_charge_load(ps, seq.Q) - point_charge_load(ParticleSet(X0, np.zeros_like(X0), w), seq.Q)
    return seq.G.T @ J * dt - dq
