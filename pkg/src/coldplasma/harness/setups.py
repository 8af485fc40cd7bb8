"""Initial states for the conservation study and the wake demo."""
from __future__ import annotations

import numpy as np

from ..fespace import interpolate_face_flux, l2_project
from ..integrators import TimeState, clean_state
from ..particles import ParticleSet, sample_gaussian_ball
from ..semidiscrete import Discretization, FieldState


def ic_E(x):
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([-np.cos(X * Y), np.cos(X * Z), np.sin(X * Y)], axis=-1)


def ic_B(x):
    p = np.pi
    X, Y, Z = p * x[..., 0], p * x[..., 1], p * x[..., 2]
    return np.stack([-0.5 * np.sin(X) * np.cos(Y) * np.cos(Z),
                     0.25 * np.cos(X) * np.sin(Y) * np.cos(Z),
                     0.25 * np.cos(X) * np.cos(Y) * np.sin(Z)], axis=-1)


def ic_rho(x, m, e):
    X, Y = x[..., 0], x[..., 1]
    return 2.0 + m / (4 * np.pi * e) * Y * np.sin(X * Y)


def ic_M(x):
    return 0.25 * np.sin(np.pi * x)


def project_fields(disc: Discretization, E, B, rho, M) -> FieldState:
    """Project point functions onto the discrete spaces.

    E, rho and M are L2-projected; B is interpolated through face fluxes so
    that its discrete divergence vanishes to round-off for solenoidal data.
    """
    return FieldState(
        l2_project(disc.rho_space, rho, mass=disc.mass_rho, cg=disc.cg),
        l2_project(disc.M_space, M, mass=disc.mass_M, cg=disc.cg),
        l2_project(disc.N, E, mass=disc.seq.mass_N, cg=disc.cg),
        interpolate_face_flux(disc.RT, B),
        disc.formulation,
    )


def conservation_state(disc: Discretization, n_particles: int = 0, weight: float = 1e-3,
                       seed: int | None = 0, clean: bool = True) -> TimeState:
    """Smooth test state on ``[-1, 1]^3`` with an optional Gaussian particle cloud."""
    m, e = disc.constants.m, disc.constants.e
    fields = project_fields(disc, ic_E, ic_B, lambda x: ic_rho(x, m, e), ic_M)
    if n_particles > 0:
        ps = sample_gaussian_ball(n_particles, 0.5, seed, m=m, e=e, weight=weight)
    else:
        ps = ParticleSet.empty(m, e)
    state = TimeState(fields, ps, 0.0)
    return clean_state(disc, state) if clean else state
