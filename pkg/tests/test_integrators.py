import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldplasma.diagnostics import gauss_residual, total_energy, total_mass
from coldplasma.harness.setups import conservation_state
from coldplasma.integrators import (AvfConfig, AvfStepper, PicardError, TimeState, avf_step_dgflux,
                                    avf_step_fluxfree, avf_xi_average, check_cfl, clean_state,
                                    euler_step, maxwell_frequency, picard_solve, ssprk3_step,
                                    stable_dt)
from coldplasma.particles import ParticleSet
from coldplasma.semidiscrete import PhysConstants
from helpers import small_disc


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 7), st.floats(-3, 3), st.floats(-3, 3))
def test_xi_average_is_exact_for_degree_seven(p, a, b):
    got = avf_xi_average(lambda u: u ** p, a, b)
    # antiderivative difference quotient, written without division by b - a
    exact = sum(a ** k * b ** (p - k) for k in range(p + 1)) / (p + 1)
    assert got == pytest.approx(exact, abs=1e-14 * max(1.0, abs(a), abs(b)) ** p)


def test_xi_average_of_vector_function():
    u0, u1 = np.array([1.0, 2.0]), np.array([3.0, -1.0])
    got = avf_xi_average(lambda u: np.stack([u[0] * u[1], u[1] ** 3]), u0, u1)
    # (1-s)u0 + s u1, integrated exactly
    assert got[0] == pytest.approx(1 * 2 + (1 * -3 + 2 * 2) / 2 + (2 * -3) / 3)
    assert got[1] == pytest.approx((1 - 2 ** 4) / (4 * -3))


def test_picard_contracts_and_reports_failure():
    x, hist = picard_solve(lambda x: 0.5 * x + 1.0, 0.0, lambda a, b: abs(a - b), 1e-12, 100)
    assert x == pytest.approx(2.0)
    assert hist[-1] < 1e-12 and len(hist) < 50
    with pytest.raises(PicardError) as err:
        picard_solve(lambda x: 2 * x + 1.0, 1.0, lambda a, b: abs(a - b), 1e-12, 5)
    assert len(err.value.history) == 5
    with pytest.raises(PicardError, match="non-finite"):
        picard_solve(lambda x: np.nan, 0.0, lambda a, b: abs(a - b), 1e-12, 5)


def test_avf_config_validation():
    with pytest.raises(ValueError):
        AvfConfig(theta=1.5)
    with pytest.raises(ValueError):
        AvfConfig(picard_tol=0.0)


CONSERVE = PhysConstants(c=1.0, m=1.0, e=-1.0, n0=1.0)


@pytest.mark.parametrize("form", ["fluxfree", "dgflux"])
def test_avf_conserves_energy_and_mass_with_particles(form):
    disc = small_disc(form, shape=(3, 3, 3), constants=CONSERVE)
    state = conservation_state(disc, n_particles=40, weight=1e-2, seed=1)
    E0 = total_energy(disc, state.fields, state.particles)
    m0 = total_mass(disc, state.fields, state.particles)
    stepper = AvfStepper(disc, AvfConfig(picard_tol=1e-13))
    for _ in range(4):
        state = stepper.step(state, 0.02)
    assert abs(total_energy(disc, state.fields, state.particles) - E0) < 1e-11 * abs(E0)
    assert abs(total_mass(disc, state.fields, state.particles) - m0) < 1e-12 * m0
    # Gauss law is carried along because the deposited current is charge-consistent
    assert gauss_residual(disc, state.fields, state.particles) < 1e-10
    assert max(stepper.stats.picard_iterations) < 60


def test_avf_wrappers_check_formulation():
    ff = small_disc("fluxfree", shape=(2, 2, 2), constants=CONSERVE)
    dg = small_disc("dgflux", shape=(2, 2, 2), constants=CONSERVE)
    state = conservation_state(ff)
    assert avf_step_fluxfree(ff, state, 0.01).t == pytest.approx(0.01)
    with pytest.raises(ValueError):
        avf_step_dgflux(ff, state, 0.01)
    with pytest.raises(ValueError):
        avf_step_fluxfree(dg, conservation_state(dg), 0.01)


def test_avf_rejects_particle_leaving_closed_box():
    disc = small_disc(shape=(2, 2, 2), constants=CONSERVE)
    state = conservation_state(disc, clean=False)
    ps = ParticleSet(np.array([[0.0, 0.0, 0.95]]), np.array([[0.0, 0.0, 50.0]]), np.array([1e-3]))
    state = TimeState(state.fields, ps)
    stepper = AvfStepper(disc, AvfConfig(adapt_dt=False))
    with pytest.raises(ValueError, match="non-periodic"):
        stepper.step(state, 0.1)


def test_explicit_particle_leaving_is_deactivated():
    disc = small_disc(shape=(2, 2, 2), constants=CONSERVE)
    state = conservation_state(disc, clean=False)
    ps = ParticleSet(np.array([[0.0, 0.0, 0.95], [0.0, 0.0, 0.0]]),
                     np.array([[0.0, 0.0, 50.0], [0.0, 0.0, 0.0]]), np.array([1e-3, 2e-3]))
    m0 = total_mass(disc, state.fields, ps)
    new = ssprk3_step(disc, TimeState(state.fields, ps), 0.1)
    assert new.particles.active.tolist() == [False, True]
    assert new.particles.removed_mass() == pytest.approx(1e-3)
    m1 = total_mass(disc, new.fields, new.particles) + new.particles.removed_mass()
    assert m1 == pytest.approx(m0, rel=1e-13)


def _run(step, disc, state, dt, n):
    for _ in range(n):
        state = step(disc, state, dt)
    return state


def test_ssprk3_and_euler_orders():
    disc = small_disc(shape=(2, 2, 2), constants=CONSERVE)
    state = conservation_state(disc)
    T = 0.04
    ref = _run(ssprk3_step, disc, state, T / 64, 64).fields
    err = {}
    for name, step in (("ssprk3", ssprk3_step), ("euler", euler_step)):
        err[name] = [np.abs(_run(step, disc, state, T / n, n).fields.E - ref.E).max() for n in (4, 8)]
    assert np.log2(err["ssprk3"][0] / err["ssprk3"][1]) == pytest.approx(3.0, abs=0.3)
    assert np.log2(err["euler"][0] / err["euler"][1]) == pytest.approx(1.0, abs=0.2)


def test_cleaning_restores_gauss_law_only():
    disc = small_disc(shape=(3, 3, 3), constants=CONSERVE)
    state = conservation_state(disc, n_particles=30, weight=1e-2, clean=False)
    assert gauss_residual(disc, state.fields, state.particles) > 1e-4
    cleaned = clean_state(disc, state)
    assert gauss_residual(disc, cleaned.fields, cleaned.particles) < 1e-10
    assert np.array_equal(cleaned.fields.B, state.fields.B)
    assert np.array_equal(cleaned.fields.rho, state.fields.rho)
    seq = disc.seq
    assert np.abs(seq.C @ (cleaned.fields.E - state.fields.E)).max() < 1e-12


def test_maxwell_frequency_matches_dense_eigenvalues():
    from scipy.linalg import eigh
    disc = small_disc(shape=(3, 2, 3), constants=PhysConstants(c=2.0))
    seq = disc.seq
    lam = eigh((seq.C.T @ seq.mass_RT @ seq.C).toarray(), seq.mass_N.toarray(), eigvals_only=True)
    assert maxwell_frequency(disc) == pytest.approx(2.0 * np.sqrt(lam.max()), rel=1e-5)


def test_stable_dt_keeps_ssprk3_bounded():
    """Vacuum fields stay bounded at 0.9 of the limit and blow up at 1.2."""
    # uncharged fluid at rest leaves pure vacuum Maxwell dynamics
    disc = small_disc(shape=(3, 3, 3), constants=PhysConstants(c=1.0, e=0.0, n0=0.0))
    state = disc.zero_state()
    state.rho[:] = 1.0
    rng = np.random.default_rng(0)
    state.E = rng.standard_normal(state.E.shape)
    dt1 = stable_dt(disc, state, safety=1.0)
    start = TimeState(state, ParticleSet.empty(1.0, -1.0))
    norms = {}
    for s in (0.9, 1.2):
        new = _run(ssprk3_step, disc, start, s * dt1, 200)
        norms[s] = np.abs(new.fields.E).max()
    assert norms[0.9] < 10 * np.abs(state.E).max()
    assert norms[1.2] > 1e3 * np.abs(state.E).max()
    assert stable_dt(disc, state, safety=0.5) == pytest.approx(0.5 * dt1)


def test_check_cfl_warns():
    disc = small_disc(shape=(2, 2, 2), constants=PhysConstants(c=1.0))
    state = conservation_state(disc).fields
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        check_cfl(disc, state, 0.01)
    with pytest.warns(RuntimeWarning, match="CFL"):
        check_cfl(disc, state, 5.0)
