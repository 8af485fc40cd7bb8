"""Time integrators: implicit AVF with Picard iteration, SSP-RK3 and forward Euler."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .fespace import gauss_1d
from .particles import (ParticleSet, deactivate_outside, deposit_point_current, lorentz_force,
                        sample_fields, segment_and_build_D, segment_field_average,
                        segmented_current, velocity)
from .semidiscrete import Discretization, FieldState, fluid_closures
from .solvers import gauss_clean

log = logging.getLogger(__name__)


class PicardError(RuntimeError):
    def __init__(self, message: str, history):
        super().__init__(f"{message}; increment history {['%.2e' % h for h in history]}")
        self.history = list(history)


@dataclass(frozen=True)
class AvfConfig:
    theta: float = 0.5
    theta2: float = 0.5
    theta3: float = 0.5
    xi_points: int = 4
    picard_tol: float = 1e-10
    picard_max: int = 100
    adapt_dt: bool = True
    max_halvings: int = 6

    def __post_init__(self):
        for name in ("theta", "theta2", "theta3"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.xi_points < 1 or self.picard_max < 1 or self.picard_tol <= 0:
            raise ValueError("invalid Picard/quadrature settings")

    @property
    def xi_rule(self):
        return gauss_1d(self.xi_points)


@dataclass
class TimeState:
    fields: FieldState
    particles: ParticleSet
    t: float = 0.0

    def copy(self) -> "TimeState":
        return TimeState(self.fields.copy(), self.particles.copy(), self.t)


@dataclass
class StepStats:
    picard_iterations: list = field(default_factory=list)
    halvings: int = 0


def avf_xi_average(f: Callable, u_old, u_new, rule=None):
    """``int_0^1 f(u^xi) dxi`` with ``u^xi = (1 - xi) u_old + xi u_new``."""
    xi, w = rule if rule is not None else gauss_1d(4)
    u_old = np.asarray(u_old, dtype=float)
    u_new = np.asarray(u_new, dtype=float)
    total = None
    for x, wx in zip(xi, w):
        val = wx * np.asarray(f((1.0 - x) * u_old + x * u_new))
        total = val if total is None else total + val
    return total


def _scaled_increment(pairs) -> float:
    worst = 0.0
    for new, old, ref in pairs:
        if new.size == 0:
            continue
        scale = max(np.abs(ref).max(), np.abs(new).max())
        if scale == 0.0:
            continue
        worst = max(worst, float(np.abs(new - old).max() / scale))
    return worst


def picard_solve(update: Callable, guess, increment: Callable, tol: float, max_iter: int):
    """Iterate ``x <- update(x)`` until ``increment(new, old) < tol``.

    Returns ``(x, history)``; raises :class:`PicardError` on non-convergence.
    """
    x = guess
    history = []
    for _ in range(max_iter):
        x_new = update(x)
        inc = increment(x_new, x)
        history.append(inc)
        x = x_new
        if not np.isfinite(inc):
            raise PicardError("non-finite Picard increment", history)
        if inc < tol:
            return x, history
    raise PicardError(f"Picard iteration did not converge in {max_iter} iterations", history)


class AvfStepper:
    """Energy-conserving implicit step for either spatial formulation.

    Each Picard iterate evaluates every nonlinear closure (path-averaged
    velocity and kinetic potential, upwind signs, particle paths) at the
    previous iterate and then only needs mass-matrix solves.  The particle
    position is updated first so that the current deposited along the new
    path and the D weights are consistent with it at every iterate.
    """

    def __init__(self, disc: Discretization, config: AvfConfig | None = None,
                 sources: Optional[Callable] = None):
        self.disc = disc
        self.config = config or AvfConfig()
        self.sources = sources
        self.stats = StepStats()

    def _source_loads(self, t, dt):
        if self.sources is None:
            return None
        xi, w = self.config.xi_rule
        total = None
        for x, wx in zip(xi, w):
            s = self.sources(t + x * dt)
            total = [wx * v for v in s] if total is None else [a + wx * v for a, v in zip(total, s)]
        return total

    def _closures(self, rho0, M0, rho1, M1):
        d = self.disc
        xi, wx = self.config.xi_rule
        r0, r1 = d.rho_at_qp(rho0), d.rho_at_qp(rho1)
        m0, m1 = d.M_at_qp(M0), d.M_at_qp(M1)
        v_avg = np.zeros_like(m0)
        P_avg = np.zeros_like(r0)
        for x, w in zip(xi, wx):
            r = (1 - x) * r0 + x * r1
            d.check_density(r)
            v, P = fluid_closures(r, (1 - x) * m0 + x * m1, d.constants.c)
            v_avg += w * v
            P_avg += w * P
        return d.project_vector(v_avg), d.project_scalar(P_avg)

    def _iterate(self, old: TimeState, cur: TimeState, dt: float, src) -> TimeState:
        d, cfg = self.disc, self.config
        c, m, e = d.constants.c, d.constants.m, d.constants.e
        f0, f1 = old.fields, cur.fields
        ps0 = old.particles
        a = ps0.active

        # particles: position from the path-averaged velocity of the current iterate
        Vbar = avf_xi_average(lambda u: velocity(u, ps0.m, c), ps0.U[a], cur.particles.U[a],
                              cfg.xi_rule) if a.any() else np.zeros((0, 3))
        X_new = ps0.X.copy()
        X_new[a] = ps0.X[a] + dt * Vbar
        if a.any():
            _, _, inside = d.mesh.locate_points(X_new[a])
            if not inside.all():
                raise ValueError("particle left the domain through a non-periodic boundary "
                                 "during an implicit step")
        path = segment_and_build_D(d.mesh, ps0.X[a], X_new[a], np.nonzero(a)[0])

        # fluid closures and mid-step quantities
        w, P = self._closures(f0.rho, f0.M, f1.rho, f1.M)
        th = cfg.theta
        rho_th = (1 - th) * f0.rho + th * f1.rho
        M_half = 0.5 * (f0.M + f1.M)
        E_half = 0.5 * (f0.E + f1.E)
        B_half = 0.5 * (f0.B + f1.B)
        M_sign = (1 - cfg.theta3) * f0.M + cfg.theta3 * f1.M
        rho_face = (1 - cfg.theta2) * f0.rho + cfg.theta2 * f1.rho
        L_rho, L_M, J = d.fluid_loads(rho_th, M_half, E_half, B_half, w, P,
                                      M_sign=M_sign, rho_face=rho_face)
        curlB, B_rate = d.maxwell_loads(E_half, B_half)
        L_E = curlB - (4 * np.pi * e / m) * J
        if path.n_segments:
            L_E -= 4 * np.pi * e * segmented_current(ps0.w, path, d.N, dt, cfg.xi_rule)
        if src is not None:
            L_rho, L_M, L_E = L_rho + src[0], L_M + src[1], L_E + src[2]
            B_rate = B_rate + src[3]

        fields = FieldState(f0.rho + dt * d.solve_rho(L_rho), f0.M + dt * d.solve_M(L_M),
                            f0.E + dt * d.solve_N(L_E), f0.B + dt * B_rate, f0.formulation)

        U_new = ps0.U.copy()
        if a.any():
            Eseg = segment_field_average(path, d.N, E_half, cfg.xi_rule)
            impulse = np.zeros((a.sum(), 3))
            np.add.at(impulse, path.segments.particle, path.D * Eseg)
            sub = ps0.copy()
            X_mid = d.mesh.wrap(0.5 * (ps0.X + X_new))
            _, Bmid = sample_fields(sub, d.N, E_half, d.RT, B_half, X=X_mid)
            U_new[a] = ps0.U[a] + dt * e * (impulse + np.cross(Vbar, Bmid[a]) / c)
        particles = replace(ps0.copy(), X=X_new, U=U_new)
        return TimeState(fields, particles, old.t + dt)

    def _increment(self, old: TimeState):
        def inc(new: TimeState, prev: TimeState) -> float:
            a = old.particles.active
            return _scaled_increment([
                (new.fields.rho, prev.fields.rho, old.fields.rho),
                (new.fields.M, prev.fields.M, old.fields.M),
                (new.fields.E, prev.fields.E, old.fields.E),
                (new.fields.B, prev.fields.B, old.fields.B),
                (new.particles.X[a], prev.particles.X[a], old.particles.X[a] - self.disc.mesh.lower),
                (new.particles.U[a], prev.particles.U[a], old.particles.U[a]),
            ])
        return inc

    def _single(self, state: TimeState, dt: float) -> TimeState:
        src = self._source_loads(state.t, dt)
        guess = state.copy()
        new, history = picard_solve(lambda cur: self._iterate(state, cur, dt, src), guess,
                                    self._increment(state), self.config.picard_tol,
                                    self.config.picard_max)
        self.stats.picard_iterations.append(len(history))
        new.particles.X = self.disc.mesh.wrap(new.particles.X)
        return new

    def step(self, state: TimeState, dt: float, _depth: int = 0) -> TimeState:
        try:
            return self._single(state, dt)
        except (PicardError, FloatingPointError) as err:
            if not self.config.adapt_dt or _depth >= self.config.max_halvings:
                raise
            log.info("Picard failed (%s); halving dt to %.3e", err, dt / 2)
            self.stats.halvings += 1
            half = self.step(state, dt / 2, _depth + 1)
            return self.step(half, dt / 2, _depth + 1)


def avf_step_fluxfree(disc: Discretization, state: TimeState, dt: float,
                      config: AvfConfig | None = None) -> TimeState:
    if disc.formulation.value != "fluxfree":
        raise ValueError("avf_step_fluxfree needs a flux-free discretization")
    return AvfStepper(disc, config).step(state, dt)


def avf_step_dgflux(disc: Discretization, state: TimeState, dt: float,
                    config: AvfConfig | None = None) -> TimeState:
    if disc.formulation.value != "dgflux":
        raise ValueError("avf_step_dgflux needs a DG-flux discretization")
    return AvfStepper(disc, config).step(state, dt)


# -- explicit methods -----------------------------------------------------------

class ExplicitRhs:
    """Semi-discrete right-hand side for fields and particles together.

    Particle positions stay unwrapped inside a step; a particle whose stage
    position lies outside a non-periodic boundary neither feels nor produces
    fields in that stage.
    """

    def __init__(self, disc: Discretization, sources: Optional[Callable] = None):
        self.disc = disc
        self.sources = sources

    def __call__(self, fields: FieldState, X, U, ps: ParticleSet, t: float):
        d = self.disc
        c = d.constants.c
        stage = replace(ps, X=X, U=U, active=ps.active.copy())
        if len(ps):
            _, _, inside = d.mesh.locate_points(X)
            stage.active &= inside
        rates = d.rates(fields, stage, self.sources, t)
        Xdot = np.zeros_like(X)
        Udot = np.zeros_like(U)
        a = stage.active
        if a.any():
            Ep, Bp = sample_fields(stage, d.N, fields.E, d.RT, fields.B)
            Xdot[a] = velocity(U[a], ps.m, c)
            Udot[a] = lorentz_force(U[a], Ep[a], Bp[a], ps.m, ps.e, c)
        return rates, Xdot, Udot


def _finish(disc, state: TimeState, fields, X, U, dt) -> TimeState:
    ps = replace(state.particles.copy(), X=X, U=U)
    if len(ps):
        deactivate_outside(disc.mesh, ps)
    return TimeState(fields, ps, state.t + dt)


def euler_step(disc: Discretization, state: TimeState, dt: float, rhs: ExplicitRhs | None = None) -> TimeState:
    rhs = rhs or ExplicitRhs(disc)
    ps = state.particles
    L, Xd, Ud = rhs(state.fields, ps.X, ps.U, ps, state.t)
    return _finish(disc, state, state.fields.axpy(dt, L), ps.X + dt * Xd, ps.U + dt * Ud, dt)


def ssprk3_step(disc: Discretization, state: TimeState, dt: float, rhs: ExplicitRhs | None = None) -> TimeState:
    """Shu-Osher three-stage, third-order SSP Runge-Kutta step."""
    rhs = rhs or ExplicitRhs(disc)
    ps = state.particles
    u0, X0, U0, t = state.fields, ps.X, ps.U, state.t

    L, Xd, Ud = rhs(u0, X0, U0, ps, t)
    u1, X1, U1 = u0.axpy(dt, L), X0 + dt * Xd, U0 + dt * Ud

    L, Xd, Ud = rhs(u1, X1, U1, ps, t + dt)
    u2 = u0.scaled(0.75).axpy(0.25, u1.axpy(dt, L))
    X2 = 0.75 * X0 + 0.25 * (X1 + dt * Xd)
    U2 = 0.75 * U0 + 0.25 * (U1 + dt * Ud)

    L, Xd, Ud = rhs(u2, X2, U2, ps, t + 0.5 * dt)
    u3 = u0.scaled(1 / 3).axpy(2 / 3, u2.axpy(dt, L))
    X3 = X0 / 3 + (2 / 3) * (X2 + dt * Xd)
    U3 = U0 / 3 + (2 / 3) * (U2 + dt * Ud)
    return _finish(disc, state, u3, X3, U3, dt)


def cfl_number(disc: Discretization, state: FieldState, dt: float) -> float:
    speed = max(disc.max_wave_speed(state), disc.constants.c)
    return dt * speed / disc.mesh.h_min


def check_cfl(disc: Discretization, state: FieldState, dt: float) -> float:
    nu = cfl_number(disc, state, dt)
    if nu > 1.0:
        warnings.warn(f"explicit time step exceeds the CFL guard (dt*c/h = {nu:.3f})", RuntimeWarning)
    return nu


def clean_state(disc: Discretization, state: TimeState) -> TimeState:
    """Replace E by its Gauss-law projection for the current charges."""
    seq = disc.seq
    load = disc.charge_load(state.fields.rho, state.particles)
    E = gauss_clean(state.fields.E, load, seq.G, seq.mass_N, _stiffness(disc), disc.cg)
    return TimeState(replace(state.fields, E=E), state.particles, state.t)


def _stiffness(disc: Discretization):
    K = getattr(disc, "_gauss_K", None)
    if K is None:
        seq = disc.seq
        K = (seq.G.T @ seq.mass_N @ seq.G).tocsr()
        disc._gauss_K = K
    return K


# imaginary-axis stability limits |z| of the explicit schemes
_IMAG_LIMIT = {"ssprk3": np.sqrt(3.0), "euler": 0.0}


def maxwell_frequency(disc: Discretization) -> float:
    """Largest angular frequency of the discrete vacuum Maxwell system."""
    from scipy.sparse.linalg import LinearOperator, eigsh

    seq = disc.seq
    K = (seq.C.T @ seq.mass_RT @ seq.C).tocsr()
    n = K.shape[0]
    if n == 0:
        return 0.0
    op = LinearOperator((n, n), matvec=lambda v: K @ v, dtype=float)
    minv = LinearOperator((n, n), matvec=lambda v: disc.solve_N(v), dtype=float)
    lam = eigsh(op, k=1, M=seq.mass_N, Minv=minv, which="LM", return_eigenvectors=False,
                tol=1e-6)[0]
    return disc.constants.c * float(np.sqrt(max(lam, 0.0)))


def stable_dt(disc: Discretization, state: FieldState, safety: float = 0.5,
              integrator: str = "ssprk3") -> float:
    """Time step from the CFL guard: ``safety`` times the explicit stability limit.

    The Maxwell limit uses the largest discrete frequency; the transport limit is
    ``h_min`` over the largest fluid wave speed.
    """
    limit = _IMAG_LIMIT.get(integrator, np.sqrt(3.0)) or 1.0
    omega = maxwell_frequency(disc)
    dt_field = limit / omega if omega > 0 else np.inf
    speed = disc.max_wave_speed(state)
    dt_fluid = disc.mesh.h_min / speed if speed > 0 else np.inf
    dt = safety * min(dt_field, dt_fluid)
    if not np.isfinite(dt):
        raise ValueError("no finite stability limit: empty field space and fluid at rest")
    return float(dt)
