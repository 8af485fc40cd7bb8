import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldplasma.diagnostics import conservation_rates
from coldplasma.semidiscrete import (FieldState, FluidStateError, Formulation, PhysConstants,
                                     dgflux_rhs, fluid_closures, fluid_energy_density, fluxfree_rhs,
                                     upwind_flux)
from helpers import random_state, small_disc

FORMS = ["fluxfree", "dgflux"]
PERIODIC = [(False, False, False), (True, True, False)]


@pytest.fixture(scope="module", params=[(f, p) for f in FORMS for p in PERIODIC],
                ids=lambda fp: f"{fp[0]}-{''.join('p' if v else 'n' for v in fp[1])}")
def disc(request):
    form, per = request.param
    return small_disc(form, per)


def test_closures_small_momentum_limit():
    rho = np.array([[2.0]])
    M = np.array([[[1e-9, 0.0, 0.0]]])
    v, P = fluid_closures(rho, M, c=1.0)
    assert v[0, 0, 0] == pytest.approx(5e-10)
    # P ~ -|M|^2/(2 rho^2 c^2) without cancellation
    assert P[0, 0] == pytest.approx(-1e-18 / 8, rel=1e-12)


def test_closures_match_direct_formulas():
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.5, 2, (4, 5))
    M = rng.standard_normal((4, 5, 3))
    c = 1.7
    g = np.sqrt(1 + np.sum(M * M, -1) / (rho * c) ** 2)
    v, P = fluid_closures(rho, M, c)
    assert np.allclose(v, M / (rho * g)[..., None])
    assert np.allclose(P, g - 1 - np.sum(M * M, -1) / (rho ** 2 * c ** 2 * g))
    assert np.allclose(fluid_energy_density(rho, M, c), rho * (g - 1) * c * c)


def test_upwind_selector():
    assert upwind_flux(1.0, 2.0, 0.3) == 1.0
    assert upwind_flux(1.0, 2.0, -0.3) == 2.0
    assert upwind_flux(1.0, 2.0, 0.0) == 1.5


def test_dof_counts_by_formulation():
    ff = small_disc("fluxfree", shape=(2, 2, 2)).dof_counts()
    dg = small_disc("dgflux", shape=(2, 2, 2)).dof_counts()
    assert ff == {"rho": 27, "M": 27, "E": 6, "B": 12, "Q0": 1}
    assert dg == {"rho": 64, "M": 12, "E": 6, "B": 12, "Q0": 1}


def test_rest_state_is_stationary(disc):
    st = disc.zero_state()
    st.rho[:] = 1.0
    r = disc.rates(st)
    for arr in (r.rho, r.M, r.E, r.B):
        assert abs(arr).max() < 1e-13


def test_invariant_rates_vanish(disc):
    rng = np.random.default_rng(11)
    for _ in range(3):
        st, ps = random_state(disc, rng)
        rates = conservation_rates(disc, st, ps)
        assert abs(rates["dH_dt"]) < 1e-10 * max(1.0, rates["scale"])
        assert rates["scale"] > 0.1
        assert abs(rates["mass_rate"]) < 1e-10
        assert rates["gauss_rate"] < 1e-10
        assert rates["divB_rate"] < 1e-10


def test_energy_rate_detects_broken_coupling():
    """Dropping the particle current leaves an energy imbalance, so the check has teeth."""
    disc = small_disc()
    st, ps = random_state(disc, np.random.default_rng(3))
    honest = conservation_rates(disc, st, ps)
    import coldplasma.semidiscrete as sd
    original = sd.deposit_point_current
    sd.deposit_point_current = lambda *a, **k: np.zeros(disc.N.n_dofs)
    try:
        broken = conservation_rates(disc, st, ps)
    finally:
        sd.deposit_point_current = original
    assert abs(honest["dH_dt"]) < 1e-10
    assert abs(broken["dH_dt"]) > 1e-3


def test_negative_density_is_reported():
    disc = small_disc()
    st = disc.zero_state()
    st.rho[:] = -1.0
    with pytest.raises(FluidStateError, match="cell"):
        disc.rates(st)


def test_formulation_mismatch_rejected():
    ff, dg = small_disc("fluxfree"), small_disc("dgflux")
    with pytest.raises(ValueError):
        ff.rates(dg.zero_state())
    with pytest.raises(ValueError):
        dgflux_rhs(ff, ff.zero_state())
    assert isinstance(fluxfree_rhs(ff, _uniform(ff)), FieldState)


def _uniform(disc):
    st = disc.zero_state()
    st.rho[:] = 1.0
    return st


def test_sources_enter_linearly():
    disc = small_disc()
    st, _ = random_state(disc, np.random.default_rng(5))
    rng = np.random.default_rng(6)
    loads = (rng.standard_normal(disc.rho_space.n_dofs), rng.standard_normal(disc.M_space.n_dofs),
             rng.standard_normal(disc.N.n_dofs), rng.standard_normal(disc.RT.n_dofs))
    base = disc.rates(st)
    forced = disc.rates(st, sources=lambda t: loads)
    assert np.allclose(disc.mass_rho @ (forced.rho - base.rho), loads[0], atol=1e-10)
    assert np.allclose(forced.B - base.B, loads[3])


def test_charge_load_neutral_background():
    disc = small_disc(constants=PhysConstants(c=1.0, m=2.0, e=-1.0, n0=1.5))
    st = disc.zero_state()
    st.rho[:] = 3.0          # rho/m = n0
    assert abs(disc.charge_load(st.rho)).max() < 1e-13


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(FORMS))
def test_invariant_rates_random_constants(seed, form):
    rng = np.random.default_rng(seed)
    k = PhysConstants(c=rng.uniform(0.5, 10), m=rng.uniform(0.5, 2), e=rng.uniform(-2, 2),
                      n0=rng.uniform(0, 2))
    disc = small_disc(form, shape=(2, 3, 2), constants=k)
    st, ps = random_state(disc, rng, n_particles=10)
    rates = conservation_rates(disc, st, ps)
    assert abs(rates["dH_dt"]) < 1e-10 * max(1.0, rates["scale"])
    assert rates["gauss_rate"] < 1e-10 * max(1.0, abs(k.e) * 100)
