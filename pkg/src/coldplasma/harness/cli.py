"""Command line entry point ``coldplasma``.

Subcommands: converge, conserve, wake, clean-field, info.  Settings come from
an optional INI file (``--config``) and are overridden by flags.  The thread
count of the linear algebra backend can be pinned with ``COLDPLASMA_THREADS``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

THREAD_ENV = "COLDPLASMA_THREADS"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _apply_thread_env():
    n = os.environ.get(THREAD_ENV)
    if n:
        if not n.isdigit() or int(n) < 1:
            raise ValueError(f"{THREAD_ENV} must be a positive integer, got {n!r}")
        for var in _THREAD_VARS:
            os.environ[var] = n


def _triple(kind):
    def parse(text):
        parts = text.replace(",", " ").split()
        if len(parts) == 1:
            parts = parts * 3
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("expected one or three values")
        return tuple(kind(p) for p in parts)
    return parse


def _int_list(text):
    return tuple(int(p) for p in text.replace(",", " ").split())


def _bool_triple(text):
    from .config import _bool
    return _triple(_bool)(text)


# flag -> (RunConfig attribute, type, help)
_FLAGS = {
    "--formulation": ("formulation", str, "fluxfree | dgflux"),
    "--integrator": ("integrator", str, "avf | ssprk3 | euler"),
    "--k": ("k", int, "element degree parameter"),
    "--dt": ("dt", float, "time step"),
    "--t-end": ("t_end", float, "final time"),
    "--cells": ("cells", _triple(int), "cells per direction (one value or three)"),
    "--periodic": ("periodic", _bool_triple, "periodicity flags (one value or three)"),
    "--levels": ("levels", _int_list, "convergence levels, cells per direction"),
    "--c": ("c", float, "speed of light"),
    "--n0": ("n0", float, "neutralizing background density"),
    "--particles": ("n_particles", int, "number of particles"),
    "--weight": ("weight", float, "particle weight"),
    "--clean-every": ("clean_every", int, "Gauss cleaning interval in steps, 0 disables"),
    "--cfl-safety": ("cfl_safety", float, "cap explicit dt at this fraction of the stability limit"),
    "--cg-tol": ("cg_tol", float, "relative CG tolerance"),
    "--picard-tol": ("picard_tol", float, "Picard tolerance"),
    "--output-dir": ("output_dir", str, "output directory for CSV and VTK files"),
    "--output-every": ("output_every", int, "CSV row cadence in steps"),
    "--vtk-every": ("vtk_every", int, "VTK snapshot cadence in steps, 0 disables"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coldplasma",
                                     description="Structure-preserving cold plasma and particle solver")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "converge": "manufactured-solution convergence study",
        "conserve": "conservation run with diagnostics CSV",
        "wake": "scaled beam-driven wake demo",
        "clean-field": "apply Gauss-law cleaning to the initial field and report residuals",
        "info": "print degrees of freedom for a configuration",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="random seed for all sampling")
        for flag, (attr, kind, doc) in _FLAGS.items():
            p.add_argument(flag, dest=attr, type=kind, help=doc)
        if name == "info":
            p.add_argument("--schema", action="store_true", help="list every config key")
    return parser


def resolve_config(args):
    from .config import CONFIG_FIELDS, RunConfig, load_config
    from .experiments import WAKE_DEFAULTS

    overrides = {k: v for k, v in vars(args).items() if k in CONFIG_FIELDS and v is not None}
    experiment = {"info": None}.get(args.command, args.command)
    if experiment:
        overrides["experiment"] = experiment
    base = RunConfig(**WAKE_DEFAULTS) if args.command == "wake" else RunConfig()
    if args.config:
        return load_config(args.config, base, **overrides)
    return base.with_overrides(**overrides)


def _cmd_converge(cfg, out):
    from .experiments import run_convergence
    res = run_convergence(cfg)
    print(res.table(), file=out)
    return EXIT_OK


def _cmd_conserve(cfg, out):
    from .experiments import run_conservation
    res = run_conservation(cfg)
    r = res.report
    print(f"steps={len(r.t) - 1} wall={res.wall_time:.2f}s", file=out)
    print("max mass_rel_err=%.3e energy_rel_err=%.3e gauss_inf=%.3e divB_L2=%.3e" % (
        max(abs(v) for v in r.mass_rel_err), max(abs(v) for v in r.energy_rel_err),
        max(r.gauss_inf), max(r.divB_L2)), file=out)
    if res.csv_path:
        print(f"csv={res.csv_path}", file=out)
    return EXIT_OK


def _cmd_wake(cfg, out):
    from .experiments import run_wake_demo, wake_signature
    res = run_wake_demo(cfg)
    for key, value in wake_signature(res, cfg).items():
        print(f"{key}={value}", file=out)
    for path in res.files:
        print(f"file={path}", file=out)
    return EXIT_OK


def _cmd_clean(cfg, out):
    from .experiments import run_clean_field
    res = run_clean_field(cfg)
    print("gauss_inf before=%.3e after=%.3e second_clean_change=%.3e curl_change=%.3e" % (
        res.before, res.after, res.second_change, res.curl_change), file=out)
    return EXIT_OK


def _cmd_info(cfg, out, schema=False):
    from .config import describe_schema
    from .experiments import make_discretization
    if schema:
        print(describe_schema(), file=out)
        return EXIT_OK
    disc = make_discretization(cfg)
    print(f"mesh cells={cfg.cells} periodic={cfg.periodic} formulation={cfg.formulation} k={cfg.k}",
          file=out)
    for name, n in disc.dof_counts().items():
        print(f"{name}={n}", file=out)
    return EXIT_OK


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_thread_env()
        cfg = resolve_config(args)
    except (ValueError, OSError) as err:
        print(f"coldplasma: configuration error: {err}", file=sys.stderr)
        return EXIT_USAGE
    from ..integrators import PicardError
    from ..semidiscrete import FluidStateError
    from ..solvers import SolverError
    commands = {"converge": _cmd_converge, "conserve": _cmd_conserve, "wake": _cmd_wake,
                "clean-field": _cmd_clean}
    try:
        if args.command == "info":
            return _cmd_info(cfg, out, args.schema)
        return commands[args.command](cfg, out)
    except (PicardError, FluidStateError, SolverError, ValueError, OSError) as err:
        print(f"coldplasma: {args.command} failed: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
