"""Relativistic point particles: pushers, current deposition and path segmentation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .fespace import FeSpace, gauss_1d
from .mesh import Segments, StructuredHexMesh, segment_moves


def gamma(u, m: float = 1.0, c: float = 1.0):
    """Lorentz factor of momentum ``u`` (last axis holds the components)."""
    u = np.asarray(u, dtype=float)
    return np.sqrt(1.0 + np.sum(u * u, axis=-1) / (m * m * c * c))


def velocity(u, m: float = 1.0, c: float = 1.0) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return u / (m * gamma(u, m, c))[..., None]


@dataclass
class ParticleSet:
    """Macro-particles of one species.

    ``U`` is the momentum (mass times gamma times velocity).  Inactive
    particles (left through an open boundary) keep their last state but no
    longer interact with the fields.
    """
    X: np.ndarray
    U: np.ndarray
    w: np.ndarray
    m: float = 1.0
    e: float = -1.0
    active: np.ndarray = field(default=None)

    def __post_init__(self):
        self.X = np.array(self.X, dtype=float).reshape(-1, 3)
        self.U = np.array(self.U, dtype=float).reshape(-1, 3)
        self.w = np.broadcast_to(np.asarray(self.w, dtype=float), (len(self.X),)).copy()
        if self.active is None:
            self.active = np.ones(len(self.X), dtype=bool)
        else:
            self.active = np.array(self.active, dtype=bool)
        if not (len(self.X) == len(self.U) == len(self.w) == len(self.active)):
            raise ValueError("particle arrays have inconsistent lengths")

    def __len__(self):
        return len(self.X)

    def copy(self) -> "ParticleSet":
        return replace(self, X=self.X.copy(), U=self.U.copy(), w=self.w.copy(),
                       active=self.active.copy())

    @classmethod
    def empty(cls, m: float = 1.0, e: float = -1.0) -> "ParticleSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), m, e)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def active_mass(self) -> float:
        """Sum of active weights: the particle share of the conserved total mass."""
        return float(self.w[self.active].sum())

    def removed_mass(self) -> float:
        return float(self.w[~self.active].sum())


def deactivate_outside(mesh: StructuredHexMesh, ps: ParticleSet) -> None:
    """Wrap periodic coordinates and deactivate particles that left the box."""
    ps.X = mesh.wrap(ps.X)
    _, _, inside = mesh.locate_points(ps.X) if len(ps) else (None, None, np.zeros(0, bool))
    ps.active &= inside


def push_position_explicit(ps: ParticleSet, dt: float, mesh: StructuredHexMesh | None = None,
                           c: float = 1.0) -> np.ndarray:
    """``X += dt U/(m gamma)`` for active particles; wraps and flags escapes when a mesh is given."""
    X = ps.X.copy()
    a = ps.active
    X[a] += dt * velocity(ps.U[a], ps.m, c)
    if mesh is not None:
        ps.X = X
        deactivate_outside(mesh, ps)
        return ps.X
    return X


def lorentz_force(U, E, B, m: float, e: float, c: float) -> np.ndarray:
    g = gamma(U, m, c)[:, None]
    return e * (E + np.cross(U, B) / (c * m * g))


def push_momentum_explicit(ps: ParticleSet, E_at, B_at, dt: float, c: float = 1.0) -> np.ndarray:
    """``U += dt e (E + U x B/(c m gamma))`` with fields sampled at the particles."""
    U = ps.U.copy()
    a = ps.active
    U[a] += dt * lorentz_force(ps.U[a], np.asarray(E_at)[a], np.asarray(B_at)[a], ps.m, ps.e, c)
    return U


def sample_fields(ps: ParticleSet, N: FeSpace, E, RT: FeSpace, B, X=None):
    """E and B at particle positions; inactive particles see zero fields."""
    X = ps.X if X is None else X
    n = len(X)
    Ep = np.zeros((n, 3))
    Bp = np.zeros((n, 3))
    a = ps.active
    if a.any():
        cells, ref, inside = N.mesh.locate_points(X[a])
        if not inside.all():
            raise ValueError("active particle outside the domain")
        nv, _ = N.tabulate(ref)
        rv, _ = RT.tabulate(ref)
        Ep[a] = np.einsum("pl,lpv->pv", N.gather(E, cells), nv)
        Bp[a] = np.einsum("pl,lpv->pv", RT.gather(B, cells), rv)
    return Ep, Bp


def deposit_point_current(ps: ParticleSet, N: FeSpace, c: float = 1.0, X=None, U=None) -> np.ndarray:
    """``sum_k w_k (U_k/gamma_k) . nu_i(X_k)`` for every EdgeN basis function."""
    X = ps.X if X is None else X
    U = ps.U if U is None else U
    a = ps.active
    if not a.any():
        return np.zeros(N.n_dofs)
    cells, ref, inside = N.mesh.locate_points(X[a])
    if not inside.all():
        raise ValueError("active particle outside the domain")
    vals, _ = N.tabulate(ref)
    j = ps.w[a, None] * U[a] / gamma(U[a], ps.m, c)[:, None]
    local = np.einsum("pv,lpv->pl", j, vals)
    return N.scatter(local, cells)


def point_charge_load(ps: ParticleSet, Q: FeSpace, X=None) -> np.ndarray:
    """``sum_k w_k phi_i(X_k)`` over the basis of a nodal space."""
    X = ps.X if X is None else X
    a = ps.active
    if not a.any():
        return np.zeros(Q.n_dofs)
    cells, ref, inside = Q.mesh.locate_points(X[a])
    if not inside.all():
        raise ValueError("active particle outside the domain")
    vals, _ = Q.tabulate(ref)
    local = ps.w[a, None] * vals[:, :, 0].T
    return Q.scatter(local, cells)


# -- segmented paths ----------------------------------------------------------

class SegmentedPath(NamedTuple):
    """Straight per-cell pieces of every move plus the diagonal D weights.

    ``segments`` indexes into the active particle list ``particles``;
    ``D[j]`` holds the diagonal of the matrix for segment ``j``.
    """
    particles: np.ndarray
    segments: Segments
    D: np.ndarray

    @property
    def n_segments(self) -> int:
        return len(self.segments.particle)

    def particle_of_segment(self) -> np.ndarray:
        return self.particles[self.segments.particle]


def segment_and_build_D(mesh: StructuredHexMesh, X_old, X_new, particles=None) -> SegmentedPath:
    """Segment the moves ``X_old -> X_new`` (``X_new`` unwrapped) at cell faces.

    D entries are segment-to-total displacement ratios; a component with no
    total displacement gets ``1/s`` on each of the ``s`` segments.
    """
    X_old = np.atleast_2d(np.asarray(X_old, dtype=float))
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if particles is None:
        particles = np.arange(len(X_old))
    segs = segment_moves(mesh, X_old, X_new)
    dA = segs.end - segs.start
    dX = (X_new - X_old)[segs.particle]
    s = segs.counts[segs.particle].astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        D = np.where(dX != 0.0, dA / dX, 1.0 / s[:, None])
    return SegmentedPath(np.asarray(particles), segs, D)


def xi_rule(n: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule on [0, 1] used for all path averages."""
    return gauss_1d(n)


def _segment_tables(space: FeSpace, path: SegmentedPath, rule):
    xi, wxi = rule
    segs = path.segments
    refs = segs.ref_start[:, None, :] + xi[None, :, None] * (segs.ref_end - segs.ref_start)[:, None, :]
    refs = np.clip(refs, 0.0, 1.0).reshape(-1, 3)
    vals, _ = space.tabulate(refs)
    nseg, nxi = len(segs.particle), len(xi)
    vals = vals.reshape(space.n_local, nseg, nxi, space.value_dim)
    return np.einsum("lsqv,q->slv", vals, wxi)  # (nseg, nloc, vdim) path averages


def segmented_current(w, path: SegmentedPath, N: FeSpace, dt: float, rule=None) -> np.ndarray:
    """``sum_p sum_i w_p (A_i - A_{i-1})/dt . int_0^1 nu_j(X^xi_i) dxi`` for each basis ``nu_j``."""
    if path.n_segments == 0:
        return np.zeros(N.n_dofs)
    rule = rule or xi_rule()
    avg = _segment_tables(N, path, rule)
    segs = path.segments
    wp = np.asarray(w)[path.particle_of_segment()]
    j = wp[:, None] * (segs.end - segs.start) / dt
    local = np.einsum("sv,slv->sl", j, avg)
    return N.scatter(local, segs.cell)


def segment_field_average(path: SegmentedPath, N: FeSpace, E, rule=None) -> np.ndarray:
    """``int_0^1 E(X^xi_i) dxi`` for each segment, shape ``(nseg, 3)``."""
    if path.n_segments == 0:
        return np.zeros((0, 3))
    rule = rule or xi_rule()
    avg = _segment_tables(N, path, rule)
    return np.einsum("sl,slv->sv", N.gather(E, path.segments.cell), avg)


def sample_gaussian_ball(n: int, cutoff: float = 0.5, rng_seed=None, alpha: float = 10.0,
                         m: float = 1.0, e: float = -1.0, weight: float = 1.0,
                         center=(0.0, 0.0, 0.0)) -> ParticleSet:
    """Rejection-sample positions with density ``exp(-alpha |x|^2)`` inside the
    box ``|x_i| < cutoff``; momenta uniform in ``[0, 1]^3``."""
    if n < 1:
        raise ValueError("need at least one particle")
    rng = np.random.default_rng(rng_seed)
    out = np.empty((0, 3))
    while len(out) < n:
        batch = rng.uniform(-cutoff, cutoff, size=(2 * (n - len(out)) + 16, 3))
        accept = rng.uniform(size=len(batch)) < np.exp(-alpha * np.sum(batch ** 2, axis=1))
        out = np.concatenate([out, batch[accept & np.all(np.abs(batch) < cutoff, axis=1)]])
    X = out[:n] + np.asarray(center, dtype=float)
    U = rng.uniform(0.0, 1.0, size=(n, 3))
    return ParticleSet(X, U, np.full(n, weight), m, e)
