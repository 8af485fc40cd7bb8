import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import truncnorm

from coldplasma.derham import build_sequence
from coldplasma.mesh import build_mesh
from coldplasma.particles import (ParticleSet, deactivate_outside, deposit_point_current, gamma,
                                  lorentz_force, point_charge_load, push_position_explicit,
                                  sample_fields, sample_gaussian_ball, segment_and_build_D,
                                  segment_field_average, velocity)
from helpers import charge_balance_residual


def test_gamma_and_velocity():
    u = np.array([[3.0, 0.0, 4.0]])
    assert gamma(u, m=1.0, c=5.0)[0] == pytest.approx(np.sqrt(2.0))
    v = velocity(u, m=1.0, c=5.0)
    assert np.linalg.norm(v) < 5.0
    assert np.allclose(v, u / np.sqrt(2.0))


def test_lorentz_force_is_perpendicular_to_velocity_for_pure_B():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((10, 3))
    F = lorentz_force(U, np.zeros((10, 3)), rng.standard_normal((10, 3)), m=2.0, e=-1.5, c=3.0)
    assert np.allclose(np.sum(F * U, axis=1), 0.0, atol=1e-14)


def test_particle_set_validation_and_mass():
    with pytest.raises(ValueError):
        ParticleSet(np.zeros((2, 3)), np.zeros((3, 3)), np.ones(2))
    ps = ParticleSet(np.zeros((3, 3)), np.zeros((3, 3)), np.array([1.0, 2.0, 3.0]), m=2.0)
    ps.active[1] = False
    assert ps.n_active == 2
    # particle "mass" counts weights, matching the fluid term (1/m) int rho
    assert ps.active_mass() == pytest.approx(4.0)
    assert ps.removed_mass() == pytest.approx(2.0)


def test_deactivation_outside_nonperiodic_box():
    mesh = build_mesh([0, 0, 0], [1, 1, 1], (2, 2, 2), periodic=(True, False, False))
    ps = ParticleSet(np.array([[1.5, 0.5, 0.5], [0.5, 1.5, 0.5]]), np.zeros((2, 3)), np.ones(2))
    deactivate_outside(mesh, ps)
    assert ps.active.tolist() == [True, False]
    assert np.allclose(ps.X[0], [0.5, 0.5, 0.5])


def test_explicit_push_moves_with_velocity():
    ps = ParticleSet(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]), np.ones(1))
    X = push_position_explicit(ps, 0.5, c=1.0)
    assert X[0, 2] == pytest.approx(0.5 / np.sqrt(2.0))
    assert ps.X[0, 2] == 0.0
    mesh = build_mesh([-1, -1, -1], [1, 1, 1], (2, 2, 2))
    push_position_explicit(ps, 0.5, mesh, c=1.0)
    assert ps.X[0, 2] == pytest.approx(0.5 / np.sqrt(2.0))


def test_gaussian_ball_sampler_is_seeded_and_bounded():
    a = sample_gaussian_ball(500, rng_seed=3)
    b = sample_gaussian_ball(500, rng_seed=3)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.U, b.U)
    assert np.abs(a.X).max() < 0.5
    assert a.U.min() >= 0.0 and a.U.max() <= 1.0
    # each coordinate follows a normal law with variance 1/20 truncated to |x| < 0.5
    big = sample_gaussian_ball(20000, rng_seed=4)
    sigma = np.sqrt(1 / 20)
    var = truncnorm(-0.5 / sigma, 0.5 / sigma, scale=sigma).var()
    assert np.allclose(big.X.var(axis=0), var, rtol=0.05)


def test_D_weights_sum_to_identity():
    mesh = build_mesh([-1, -1, -1], [1, 1, 1], (4, 4, 4))
    rng = np.random.default_rng(1)
    X0 = rng.uniform(-0.9, 0.9, (200, 3))
    X1 = np.clip(X0 + rng.uniform(-0.6, 0.6, (200, 3)), -1, 1)
    X1[:5, 1] = X0[:5, 1]          # no displacement along y for a few moves
    path = segment_and_build_D(mesh, X0, X1)
    sums = np.zeros((200, 3))
    np.add.at(sums, path.segments.particle, path.D)
    assert np.allclose(sums, 1.0, atol=1e-14)


def test_segmented_current_balances_charge():
    mesh = build_mesh([-1, -1, -1], [1, 1, 1], (4, 4, 4))
    seq = build_sequence(mesh)
    rng = np.random.default_rng(2)
    X0 = rng.uniform(-0.95, 0.95, (300, 3))
    X1 = np.clip(X0 + rng.uniform(-0.7, 0.7, (300, 3)), -1, 1)
    res = charge_balance_residual(seq, X0, X1, rng.uniform(0.1, 1.0, 300), dt=0.1)
    assert abs(res).max() < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.booleans())
def test_charge_balance_random_moves(seed, periodic):
    per = (periodic, periodic, False)
    mesh = build_mesh([-1, -1, -1], [1, 1, 1], (3, 4, 3), per)
    seq = build_sequence(mesh)
    rng = np.random.default_rng(seed)
    X0 = rng.uniform(-0.99, 0.99, (20, 3))
    X1 = X0 + rng.uniform(-1.2, 1.2, (20, 3))
    X1[:, 2] = np.clip(X1[:, 2], -1, 1)
    if not periodic:
        X1 = np.clip(X1, -1, 1)
    res = charge_balance_residual(seq, X0, X1, np.ones(20), dt=0.05)
    assert abs(res).max() < 1e-11


def test_point_current_is_gradient_consistent():
    """``G^T`` of the point current equals the rate of the point charge."""
    mesh = build_mesh([-1, -1, -1], [1, 1, 1], (3, 3, 3))
    seq = build_sequence(mesh)
    rng = np.random.default_rng(4)
    ps = ParticleSet(rng.uniform(-0.9, 0.9, (50, 3)), rng.standard_normal((50, 3)), rng.uniform(size=50))
    J = deposit_point_current(ps, seq.N, c=2.0)
    eps = 1e-6
    V = velocity(ps.U, ps.m, 2.0)
    moved = ParticleSet(ps.X + eps * V, ps.U, ps.w)
    back = ParticleSet(ps.X - eps * V, ps.U, ps.w)
    rate = (point_charge_load(moved, seq.Q) - point_charge_load(back, seq.Q)) / (2 * eps)
    # J carries U/gamma = m v
    assert np.allclose(seq.G.T @ J / ps.m, rate, atol=1e-7)


def test_field_sampling_and_path_average_of_constant_field():
    mesh = build_mesh([0, 0, 0], [1, 1, 1], (2, 2, 2), periodic=(True, True, True))
    seq = build_sequence(mesh, constrained=False)
    E0 = np.array([1.0, -2.0, 0.5])
    from coldplasma.fespace import l2_project
    E = l2_project(seq.N, lambda x: np.broadcast_to(E0, x.shape))
    ps = ParticleSet(np.array([[0.3, 0.6, 0.1]]), np.zeros((1, 3)), np.ones(1))
    Ep, Bp = sample_fields(ps, seq.N, E, seq.RT, np.zeros(seq.RT.n_dofs))
    assert np.allclose(Ep[0], E0) and not Bp.any()
    path = segment_and_build_D(mesh, ps.X, ps.X + [[0.8, 0.1, -0.4]])
    assert np.allclose(segment_field_average(path, seq.N, E), E0)


def test_inactive_particles_sample_zero_field():
    mesh = build_mesh([0, 0, 0], [1, 1, 1], (2, 2, 2))
    seq = build_sequence(mesh, constrained=False)
    ps = ParticleSet(np.full((2, 3), 0.5), np.zeros((2, 3)), np.ones(2))
    ps.active[0] = False
    Ep, _ = sample_fields(ps, seq.N, np.ones(seq.N.n_dofs), seq.RT, np.ones(seq.RT.n_dofs))
    assert not Ep[0].any() and Ep[1].any()
