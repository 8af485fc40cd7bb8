import numpy as np
import pytest

from coldplasma.diagnostics import (ConservationReport, divB_norm, field_energy, fluid_energy,
                                    gauss_residual, particle_energy, total_energy, total_mass)
from coldplasma.fespace import l2_project
from coldplasma.particles import ParticleSet
from coldplasma.semidiscrete import PhysConstants
from helpers import small_disc

K = PhysConstants(c=3.0, m=2.0, e=-0.5, n0=0.7)


@pytest.fixture(scope="module")
def periodic_disc():
    return small_disc(periodic=(True, True, True), shape=(2, 3, 2), constants=K)


def _uniform_state(disc, rho0, M0, E0):
    st = disc.zero_state()
    const = lambda v: (lambda x: np.broadcast_to(np.asarray(v, float), x.shape[:-1] + np.shape(v)))
    st.rho = l2_project(disc.rho_space, const(rho0))
    st.M = l2_project(disc.M_space, const(M0))
    st.E = l2_project(disc.N, const(E0))
    return st


def test_energies_of_uniform_state(periodic_disc):
    d = periodic_disc
    rho0, M0, E0 = 1.5, np.array([0.4, -1.0, 2.0]), np.array([0.3, 0.0, -0.2])
    st = _uniform_state(d, rho0, M0, E0)
    V = d.mesh.volume
    g = np.sqrt(1 + M0 @ M0 / (rho0 * K.c) ** 2)
    assert fluid_energy(d, st) == pytest.approx(V * rho0 * (g - 1) * K.c ** 2, rel=1e-12)
    assert field_energy(d, st) == pytest.approx(V * (E0 @ E0) / (8 * np.pi), rel=1e-12)
    assert total_mass(d, st) == pytest.approx(V * rho0 / K.m, rel=1e-12)


def test_particle_energy_and_mass(periodic_disc):
    d = periodic_disc
    U = np.array([[0.0, 0.0, 6.0], [1e-6, 0.0, 0.0]])
    ps = ParticleSet(np.zeros((2, 3)), U, np.array([0.5, 2.0]), m=K.m, e=K.e)
    g = np.sqrt(1 + np.sum(U * U, 1) / (K.m * K.c) ** 2)
    expected = np.sum(ps.w * (g - 1)) * K.m * K.c ** 2
    assert particle_energy(d, ps) == pytest.approx(expected, rel=1e-12)
    # tiny momentum: kinetic limit |U|^2/(2m), no cancellation
    assert particle_energy(d, ParticleSet(np.zeros((1, 3)), U[1:], np.ones(1), m=K.m)) == \
        pytest.approx(1e-12 / (2 * K.m), rel=1e-9)
    ps.active[0] = False
    st = _uniform_state(d, 1.0, np.zeros(3), np.zeros(3))
    assert total_mass(d, st, ps) == pytest.approx(d.mesh.volume / K.m + 2.0)
    assert particle_energy(d, None) == 0.0


def test_total_energy_is_the_sum(periodic_disc):
    d = periodic_disc
    st = _uniform_state(d, 1.2, np.array([0.1, 0.2, 0.3]), np.array([1.0, 1.0, 1.0]))
    ps = ParticleSet(np.zeros((1, 3)), np.ones((1, 3)), np.ones(1), m=K.m, e=K.e)
    assert total_energy(d, st, ps) == pytest.approx(
        fluid_energy(d, st) + field_energy(d, st) + particle_energy(d, ps))


def test_constraint_norms_vanish_for_neutral_rest_state(periodic_disc):
    d = periodic_disc
    st = _uniform_state(d, K.n0 * K.m, np.zeros(3), np.zeros(3))
    assert gauss_residual(d, st) < 1e-14
    assert divB_norm(d, st) == 0.0
    st.B = np.random.default_rng(0).standard_normal(st.B.shape)
    assert divB_norm(d, st) > 0.1


def test_report_rows_are_relative_to_first_record(periodic_disc):
    d = periodic_disc
    rep = ConservationReport()
    a = _uniform_state(d, 1.0, np.zeros(3), np.array([1.0, 0, 0]))
    b = _uniform_state(d, 1.1, np.zeros(3), np.array([1.0, 0, 0]))
    rep.record(d, 0.0, a)
    rep.record(d, 0.5, b)
    rows = list(rep.rows())
    assert len(rows) == 2 and rows[0][1] == 0.0 and rows[0][2] == 0.0
    assert rows[1][0] == 0.5
    assert rows[1][1] == pytest.approx(0.1, rel=1e-10)
    assert rep.energy_rel_err[1] == pytest.approx((rep.energy[1] - rep.energy[0]) / rep.energy[0])
    assert rows[1][5] == 0.0
