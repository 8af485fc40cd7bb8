"""Experiment drivers: MMS convergence, conservation runs, Gauss cleaning and the wake demo."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diagnostics import ConservationReport, gauss_residual
from ..fespace import gauss_rule, interpolate_face_flux, l2_project, quadrature_points
from ..integrators import (AvfConfig, AvfStepper, ExplicitRhs, TimeState, check_cfl, clean_state,
                           euler_step, ssprk3_step, stable_dt)
from ..mesh import build_mesh
from ..particles import ParticleSet, gamma
from ..semidiscrete import Discretization, FieldState, Formulation, PhysConstants
from ..solvers import CgConfig
from . import io
from .config import RunConfig
from .mms import MmsForcing, mms_fields
from .setups import conservation_state, project_fields

log = logging.getLogger(__name__)


def make_discretization(cfg: RunConfig, cells=None) -> Discretization:
    mesh = build_mesh(cfg.lower, cfg.upper, cells or cfg.cells, cfg.periodic)
    return Discretization(mesh, Formulation(cfg.formulation),
                          PhysConstants(cfg.c, cfg.m, cfg.e, cfg.n0),
                          CgConfig(rel_tol=cfg.cg_tol, max_iter=cfg.cg_max_iter), cfg.k)


def avf_config(cfg: RunConfig) -> AvfConfig:
    return AvfConfig(picard_tol=cfg.picard_tol, picard_max=cfg.picard_max,
                     adapt_dt=cfg.adapt_dt, xi_points=cfg.xi_points)


class Stepper:
    """Uniform ``step(state, dt)`` over the three integrators."""

    def __init__(self, disc: Discretization, integrator: str, avf: AvfConfig | None = None,
                 sources=None):
        self.disc = disc
        self.integrator = integrator
        if integrator == "avf":
            self.avf = AvfStepper(disc, avf, sources)
        else:
            self.rhs = ExplicitRhs(disc, sources)

    def step(self, state: TimeState, dt: float) -> TimeState:
        if self.integrator == "avf":
            return self.avf.step(state, dt)
        if self.integrator == "ssprk3":
            return ssprk3_step(self.disc, state, dt, self.rhs)
        return euler_step(self.disc, state, dt, self.rhs)

    @property
    def picard_iterations(self) -> list:
        return self.avf.stats.picard_iterations if self.integrator == "avf" else []


# -- conservation -----------------------------------------------------------------

@dataclass
class ConservationResult:
    report: ConservationReport
    clean_steps: list
    final: TimeState
    picard_iterations: list
    wall_time: float
    csv_path: Path | None = None


def run_conservation(cfg: RunConfig, disc: Discretization | None = None) -> ConservationResult:
    disc = disc or make_discretization(cfg)
    state = conservation_state(disc, cfg.n_particles, cfg.weight, cfg.seed, clean=cfg.clean_initial)
    stepper = Stepper(disc, cfg.integrator, avf_config(cfg))
    dt, n_steps = step_plan(disc, state.fields, cfg)
    report = ConservationReport()
    report.record(disc, state.t, state.fields, state.particles)
    clean_steps = [0] if cfg.clean_initial else []
    t0 = time.perf_counter()
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    for n in range(1, n_steps + 1):
        state = stepper.step(state, dt)
        if cfg.clean_every and n % cfg.clean_every == 0:
            state = clean_state(disc, state)
            clean_steps.append(len(report.t))
        if n % cfg.output_every == 0 or n == n_steps:
            report.record(disc, state.t, state.fields, state.particles)
        elif clean_steps and clean_steps[-1] == len(report.t):
            clean_steps.pop()
        if out_dir and cfg.vtk_every and n % cfg.vtk_every == 0:
            _snapshot(out_dir, disc, state, n, cfg.particle_dump)
    wall = time.perf_counter() - t0
    csv_path = io.write_csv(out_dir / cfg.csv_name, report.rows()) if out_dir else None
    return ConservationResult(report, clean_steps, state, stepper.picard_iterations, wall, csv_path)


def step_plan(disc: Discretization, fields: FieldState, cfg: RunConfig) -> tuple[float, int]:
    """Time step and step count covering ``t_end``; explicit runs honour the CFL guard."""
    dt = cfg.dt
    if cfg.integrator != "avf":
        if cfg.cfl_safety > 0:
            dt = min(dt, stable_dt(disc, fields, cfg.cfl_safety, cfg.integrator))
        check_cfl(disc, fields, dt)
    n = max(int(np.ceil(cfg.t_end / dt - 1e-9)), 0)
    if n and abs(n * dt - cfg.t_end) > 1e-12 * max(cfg.t_end, 1.0):
        dt = cfg.t_end / n
    return dt, n


def _snapshot(out_dir: Path, disc, state: TimeState, n: int, particles: bool):
    io.write_state_vtk(out_dir / f"fields_{n:06d}.vtk", disc, state.fields, f"t={state.t:.17g}")
    io.dump_coefficients(out_dir / f"coeffs_{n:06d}.npz", state.fields, state.t)
    if particles and len(state.particles):
        io.dump_particles(out_dir / f"particles_{n:06d}.csv", state.particles)


def fit_order(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.log(np.asarray(x, float)), np.log(np.abs(np.asarray(y, float)))
    return float(np.polyfit(x, y, 1)[0])


# -- manufactured solution -------------------------------------------------------------

@dataclass
class ConvergenceResult:
    h: list
    errors: dict            # name -> list of L2 errors per level
    orders: dict            # name -> successive log2 ratios
    picard_mean: list
    wall_time: list = field(default_factory=list)

    def table(self) -> str:
        names = list(self.errors)
        lines = ["h," + ",".join(f"err_{n}" for n in names)]
        for i, h in enumerate(self.h):
            lines.append("%.17g," % h + ",".join("%.6e" % self.errors[n][i] for n in names))
        lines.append("order," + ",".join(
            "/".join("%.3f" % o for o in self.orders[n]) for n in names))
        return "\n".join(lines)


def l2_errors(disc: Discretization, state: FieldState, t: float, npts: int = 5) -> dict:
    quad = gauss_rule(npts)
    x = quadrature_points(disc.mesh, quad)
    E, B, rho, M = mms_fields(t, x, disc.constants)
    w = quad.weights * disc.mesh.cell_volume
    out = {}
    for name, space, coeffs, exact in (("E", disc.N, state.E, E), ("B", disc.RT, state.B, B),
                                       ("rho", disc.rho_space, state.rho, rho[..., None]),
                                       ("M", disc.M_space, state.M, M)):
        vals, _ = space.tabulate(quad.points)
        approx = np.einsum("cl,lqv->cqv", space.gather(coeffs), vals)
        diff = approx - (exact if exact.ndim == 3 else exact[..., None])
        out[name] = float(np.sqrt(np.einsum("q,cqv->", w, diff * diff)))
    return out


def mms_initial_state(disc: Discretization) -> TimeState:
    k = disc.constants
    f = lambda i: (lambda x: mms_fields(0.0, x, k)[i])
    fields = FieldState(
        l2_project(disc.rho_space, f(2), mass=disc.mass_rho, cg=disc.cg),
        l2_project(disc.M_space, f(3), mass=disc.mass_M, cg=disc.cg),
        l2_project(disc.N, f(0), mass=disc.seq.mass_N, cg=disc.cg),
        interpolate_face_flux(disc.RT, f(1)),
        disc.formulation)
    return TimeState(fields, ParticleSet.empty(k.m, k.e), 0.0)


def run_convergence(cfg: RunConfig) -> ConvergenceResult:
    hs, errs, picard, walls = [], {"E": [], "B": [], "rho": [], "M": []}, [], []
    for n in cfg.levels:
        disc = make_discretization(cfg, (n, n, n))
        state = mms_initial_state(disc)
        stepper = Stepper(disc, cfg.integrator, avf_config(cfg), MmsForcing(disc))
        t0 = time.perf_counter()
        dt, n_steps = step_plan(disc, state.fields, cfg)
        for _ in range(n_steps):
            state = stepper.step(state, dt)
        walls.append(time.perf_counter() - t0)
        e = l2_errors(disc, state.fields, state.t)
        for k in errs:
            errs[k].append(e[k])
        hs.append(float(disc.mesh.h.max()))
        it = stepper.picard_iterations
        picard.append(float(np.mean(it)) if it else 0.0)
        log.info("level %d: h=%.4g errors %s (%.1fs)", n, hs[-1], e, walls[-1])
    orders = {k: [float(np.log(v[i] / v[i + 1]) / np.log(hs[i] / hs[i + 1])) for i in range(len(v) - 1)]
              for k, v in errs.items()}
    return ConvergenceResult(hs, errs, orders, picard, walls)


# -- Gauss cleaning ----------------------------------------------------------------------

@dataclass
class CleanResult:
    before: float
    after: float
    second_change: float
    curl_change: float


def run_clean_field(cfg: RunConfig) -> CleanResult:
    disc = make_discretization(cfg)
    state = conservation_state(disc, cfg.n_particles, cfg.weight, cfg.seed, clean=False)
    before = gauss_residual(disc, state.fields, state.particles)
    once = clean_state(disc, state)
    twice = clean_state(disc, once)
    after = gauss_residual(disc, once.fields, once.particles)
    dE = once.fields.E - state.fields.E
    res = CleanResult(before, after, float(np.abs(twice.fields.E - once.fields.E).max()),
                      float(np.abs(disc.seq.C @ dE).max()))
    if cfg.output_dir:
        io.write_state_vtk(Path(cfg.output_dir) / "cleaned.vtk", disc, once.fields)
    return res


# -- wake demo ------------------------------------------------------------------------------

WAKE_DEFAULTS = dict(
    experiment="wake", formulation="fluxfree", integrator="ssprk3",
    lower=(-1.0, -1.0, -1.0), upper=(1.0, 1.0, 1.0), cells=(16, 16, 20),
    periodic=(True, True, False), c=1.0, m=1.0, e=-1.0, n0=1.0,
    n_particles=2000, beam_speed=0.97, beam_lower=(-0.25, -0.25, -0.9),
    beam_upper=(0.25, 0.25, -0.6), beam_density=0.25, background_density=1.0,
    dt=0.05, t_end=1.4, clean_every=100, clean_initial=True, cfl_safety=0.5,
)


def wake_config(**overrides) -> RunConfig:
    return RunConfig(**{**WAKE_DEFAULTS, **overrides})


def beam_particles(cfg: RunConfig, rng_seed=None) -> ParticleSet:
    rng = np.random.default_rng(cfg.seed if rng_seed is None else rng_seed)
    lo, hi = np.asarray(cfg.beam_lower, float), np.asarray(cfg.beam_upper, float)
    X = rng.uniform(lo, hi, size=(cfg.n_particles, 3))
    beta = cfg.beam_speed
    u = cfg.m * cfg.c * beta / np.sqrt(1.0 - beta * beta)
    U = np.zeros_like(X)
    U[:, 2] = u
    vol = float(np.prod(hi - lo))
    w = cfg.beam_density * vol / max(cfg.n_particles, 1)
    return ParticleSet(X, U, np.full(cfg.n_particles, w), cfg.m, cfg.e)


@dataclass
class WakeResult:
    report: ConservationReport
    final: TimeState
    initial: TimeState
    disc: Discretization
    axis_z: np.ndarray
    axis_Ez: np.ndarray
    beam_z: float
    density_modulation: float
    max_field: float
    files: list


def run_wake_demo(cfg: RunConfig) -> WakeResult:
    disc = make_discretization(cfg)
    ps = beam_particles(cfg)
    fields = disc.zero_state()
    fields.rho = l2_project(disc.rho_space, lambda x: np.full(x.shape[:-1], cfg.background_density),
                            mass=disc.mass_rho, cg=disc.cg)
    state = TimeState(fields, ps, 0.0)
    if cfg.clean_initial:
        state = clean_state(disc, state)
    initial = state.copy()
    dt, n_steps = step_plan(disc, state.fields, cfg)
    stepper = Stepper(disc, cfg.integrator, avf_config(cfg))
    report = ConservationReport()
    report.record(disc, 0.0, state.fields, state.particles)
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    files = []
    if out_dir and cfg.vtk_every:
        _snapshot(out_dir, disc, state, 0, cfg.particle_dump)
    for n in range(1, n_steps + 1):
        state = stepper.step(state, dt)
        if cfg.clean_every and n % cfg.clean_every == 0:
            state = clean_state(disc, state)
        if n % cfg.output_every == 0 or n == n_steps:
            report.record(disc, state.t, state.fields, state.particles)
        if out_dir and cfg.vtk_every and (n % cfg.vtk_every == 0 or n == n_steps):
            _snapshot(out_dir, disc, state, n, cfg.particle_dump)
    if out_dir:
        files.append(io.write_csv(out_dir / cfg.csv_name, report.rows()))
        files.extend(sorted(out_dir.glob("fields_*.vtk")))

    from ..fespace import eval_field
    zs = np.linspace(cfg.lower[2] + 1e-9, cfg.upper[2] - 1e-9, 4 * cfg.cells[2] + 1)
    axis = np.stack([np.zeros_like(zs), np.zeros_like(zs), zs], axis=1)
    Ez = eval_field(disc.N, state.fields.E, axis)[:, 2]
    a = state.particles.active
    beam_z = float(np.mean(state.particles.X[a, 2])) if a.any() else float("nan")
    rho_c = io.cell_center_values(disc, state.fields)["rho"]
    mod = float(np.abs(rho_c - cfg.background_density).max())
    max_field = float(max(np.abs(state.fields.E).max(initial=0.0), np.abs(state.fields.B).max(initial=0.0)))
    return WakeResult(report, state, initial, disc, zs, Ez, beam_z, mod, max_field, files)


def wake_signature(res: WakeResult, cfg: RunConfig) -> dict:
    """Sign changes of E_z on the axis behind the beam and the density modulation."""
    tail = float(np.min(res.final.particles.X[res.final.particles.active, 2])) \
        if res.final.particles.active.any() else cfg.upper[2]
    behind = res.axis_z < tail
    ez = res.axis_Ez[behind]
    scale = np.abs(ez).max() if ez.size else 0.0
    sig = ez[np.abs(ez) > 0.05 * scale] if scale > 0 else ez[:0]
    changes = int(np.sum(np.sign(sig[1:]) != np.sign(sig[:-1]))) if sig.size > 1 else 0
    return {"sign_changes_behind_beam": changes, "max_abs_Ez_behind": float(scale),
            "density_modulation": res.density_modulation, "beam_z": res.beam_z}
