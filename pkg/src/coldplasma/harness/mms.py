"""Manufactured solution on ``[-1, 1]^3`` and its forcing terms.

The forcing terms are the residuals of the strong equations

    d_t rho + div(M/gamma)                                   = S_rho
    d_t M + div(M (x) M/(rho gamma)) - rho (e/m)(E + w x B/c) = S_M
    d_t E - c curl B + 4 pi (e/m) M/gamma                    = S_E
    d_t B + c curl E                                         = S_B

with ``gamma = sqrt(1 + |M|^2/(rho c)^2)``, derived symbolically once per
set of constants.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp

from ..fespace import assemble_load, quadrature_points
from ..semidiscrete import Discretization, PhysConstants

_t, _x, _y, _z = sp.symbols("t x y z", real=True)


def _exact_sym(m, e):
    sx, sy, sz = (sp.sin(sp.pi * v) for v in (_x, _y, _z))
    cx, cy, cz = (sp.cos(sp.pi * v) for v in (_x, _y, _z))
    st, ct = sp.sin(_t), sp.cos(_t)
    E = sp.Matrix([-st * cx * sy * sz, st * sx * cy * sz, st * sx * sy * cz])
    B = sp.Matrix([-ct * sx * cy * cz / 2, ct * cx * sy * cz / 4, ct * cx * cy * sz / 4])
    rho = 2 - sp.Rational(1, 4) * sp.nsimplify(m / e) * st * sx * sy * sz
    M = sp.Matrix([st * sx * cy * cz, st * cx * sy * cz, st * cx * cy * sz])
    return E, B, rho, M


def _curl(F):
    return sp.Matrix([sp.diff(F[2], _y) - sp.diff(F[1], _z),
                      sp.diff(F[0], _z) - sp.diff(F[2], _x),
                      sp.diff(F[1], _x) - sp.diff(F[0], _y)])


def _div(F):
    return sp.diff(F[0], _x) + sp.diff(F[1], _y) + sp.diff(F[2], _z)


@lru_cache(maxsize=8)
def _compiled(c: float, m: float, e: float):
    E, B, rho, M = _exact_sym(m, e)
    c_, m_, e_ = sp.nsimplify(c), sp.nsimplify(m), sp.nsimplify(e)
    g = sp.sqrt(1 + (M.dot(M)) / (rho ** 2 * c_ ** 2))
    w = M / (rho * g)
    S_rho = sp.diff(rho, _t) + _div(M / g)
    flux = M * w.T
    div_flux = sp.Matrix([sum(sp.diff(flux[i, j], v) for j, v in enumerate((_x, _y, _z)))
                          for i in range(3)])
    S_M = sp.diff(M, _t) + div_flux - rho * (e_ / m_) * (E + w.cross(B) / c_)
    S_E = sp.diff(E, _t) - c_ * _curl(B) + 4 * sp.pi * (e_ / m_) * M / g
    S_B = sp.diff(B, _t) + c_ * _curl(E)
    args = (_t, _x, _y, _z)
    f = lambda expr: sp.lambdify(args, expr, "numpy", cse=True)
    return {
        "E": f(list(E)), "B": f(list(B)), "rho": f(rho), "M": f(list(M)),
        "S_E": f(list(S_E)), "S_B": f(list(S_B)), "S_rho": f(S_rho), "S_M": f(list(S_M)),
    }


def _vec(fn, t, x):
    x = np.asarray(x, dtype=float)
    vals = fn(t, x[..., 0], x[..., 1], x[..., 2])
    return np.stack([np.broadcast_to(v, x.shape[:-1]) for v in vals], axis=-1)


def _scal(fn, t, x):
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(fn(t, x[..., 0], x[..., 1], x[..., 2]), x.shape[:-1]).astype(float)


def mms_fields(t: float, x, constants: PhysConstants | None = None):
    """Exact ``(E, B, rho, M)`` at points ``x`` (shape ``(..., 3)``)."""
    k = constants or PhysConstants()
    fn = _compiled(k.c, k.m, k.e)
    return _vec(fn["E"], t, x), _vec(fn["B"], t, x), _scal(fn["rho"], t, x), _vec(fn["M"], t, x)


def mms_sources(t: float, x, constants: PhysConstants | None = None):
    """Forcing ``(S_E, S_B, S_rho, S_M)`` at points ``x``."""
    k = constants or PhysConstants()
    fn = _compiled(k.c, k.m, k.e)
    return (_vec(fn["S_E"], t, x), _vec(fn["S_B"], t, x),
            _scal(fn["S_rho"], t, x), _vec(fn["S_M"], t, x))


class MmsForcing:
    """Callable ``t -> (load_rho, load_M, load_E, B_rate)`` for a discretization."""

    def __init__(self, disc: Discretization):
        self.disc = disc
        self.x = quadrature_points(disc.mesh, disc.quad)

    def __call__(self, t: float):
        d = self.disc
        S_E, S_B, S_rho, S_M = mms_sources(t, self.x, d.constants)
        return (assemble_load(d.rho_space, S_rho, d.quad),
                assemble_load(d.M_space, S_M, d.quad),
                assemble_load(d.N, S_E, d.quad),
                d.solve_RT(assemble_load(d.RT, S_B, d.quad)))
