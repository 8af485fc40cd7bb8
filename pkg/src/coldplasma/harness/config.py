"""Run configuration: INI files with fixed sections and documented keys.

Every key is listed in ``SCHEMA`` with its type, default and unit; any other
key or section is rejected.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

EXPERIMENTS = ("converge", "conserve", "wake", "clean-field")
INTEGRATORS = ("avf", "ssprk3", "euler")
FORMULATIONS = ("fluxfree", "dgflux")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bools(text: str) -> tuple[bool, ...]:
    return tuple(_bool(v) for v in text.replace(",", " ").split())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# (section, key) -> (attribute, parser, description with unit)
SCHEMA: dict[tuple[str, str], tuple[str, Any, str]] = {
    ("run", "experiment"): ("experiment", str, "converge | conserve | wake | clean-field"),
    ("run", "formulation"): ("formulation", str, "fluxfree | dgflux"),
    ("run", "integrator"): ("integrator", str, "avf | ssprk3 | euler"),
    ("run", "k"): ("k", int, "element degree parameter (only 0 is supported)"),
    ("run", "dt"): ("dt", float, "time step [normalized time]"),
    ("run", "t_end"): ("t_end", float, "final time [normalized time]"),
    ("run", "clean_every"): ("clean_every", int, "Gauss cleaning interval in steps, 0 disables"),
    ("run", "clean_initial"): ("clean_initial", _bool, "clean E at t=0"),
    ("run", "seed"): ("seed", int, "random seed for particle sampling"),
    ("run", "cfl_safety"): ("cfl_safety", float,
                            "explicit runs: cap dt at this fraction of the stability limit, 0 disables"),
    ("mesh", "lower"): ("lower", _floats, "lower corner x y z [length]"),
    ("mesh", "upper"): ("upper", _floats, "upper corner x y z [length]"),
    ("mesh", "cells"): ("cells", _ints, "cells per direction nx ny nz"),
    ("mesh", "periodic"): ("periodic", _bools, "periodicity flags per direction"),
    ("mesh", "levels"): ("levels", _ints, "cells per direction for each convergence level"),
    ("physics", "c"): ("c", float, "speed of light [length/time]"),
    ("physics", "m"): ("m", float, "species mass [mass]"),
    ("physics", "e"): ("e", float, "species charge [charge]"),
    ("physics", "n0"): ("n0", float, "neutralizing background density [1/volume]"),
    ("particles", "count"): ("n_particles", int, "number of macro-particles"),
    ("particles", "weight"): ("weight", float, "weight per macro-particle"),
    ("particles", "beam_speed"): ("beam_speed", float, "wake demo beam speed [fraction of c]"),
    ("particles", "beam_lower"): ("beam_lower", _floats, "wake demo beam box lower corner [length]"),
    ("particles", "beam_upper"): ("beam_upper", _floats, "wake demo beam box upper corner [length]"),
    ("particles", "beam_density"): ("beam_density", float, "wake demo beam density [1/volume]"),
    ("particles", "background_density"): ("background_density", float,
                                          "wake demo fluid density [mass/volume]"),
    ("solver", "cg_tol"): ("cg_tol", float, "relative CG tolerance"),
    ("solver", "cg_max_iter"): ("cg_max_iter", int, "CG iteration cap"),
    ("solver", "picard_tol"): ("picard_tol", float, "scaled Picard increment tolerance"),
    ("solver", "picard_max"): ("picard_max", int, "Picard iteration cap"),
    ("solver", "adapt_dt"): ("adapt_dt", _bool, "halve dt when Picard fails"),
    ("solver", "xi_points"): ("xi_points", int, "Gauss points for path averages"),
    ("output", "dir"): ("output_dir", str, "output directory"),
    ("output", "csv"): ("csv_name", str, "diagnostics CSV file name"),
    ("output", "every"): ("output_every", int, "write a CSV row every n steps"),
    ("output", "vtk_every"): ("vtk_every", int, "write VTK snapshots every n steps, 0 disables"),
    ("output", "particle_dump"): ("particle_dump", _bool, "write particle CSV with each snapshot"),
}


@dataclass
class RunConfig:
    experiment: str = "conserve"
    formulation: str = "fluxfree"
    integrator: str = "avf"
    k: int = 0
    dt: float = 5e-3
    t_end: float = 0.3
    clean_every: int = 0
    clean_initial: bool = True
    seed: int = 0
    cfl_safety: float = 0.0
    lower: tuple = (-1.0, -1.0, -1.0)
    upper: tuple = (1.0, 1.0, 1.0)
    cells: tuple = (4, 4, 4)
    periodic: tuple = (False, False, False)
    levels: tuple = (4, 8, 16)
    c: float = 1.0
    m: float = 1.0
    e: float = -1.0
    n0: float = 2.0
    n_particles: int = 0
    weight: float = 1e-3
    beam_speed: float = 0.97
    beam_lower: tuple = (-0.1, -0.1, -0.8)
    beam_upper: tuple = (0.1, 0.1, -0.5)
    beam_density: float = 1.0
    background_density: float = 1.0
    cg_tol: float = 1e-12
    cg_max_iter: int = 10_000
    picard_tol: float = 1e-10
    picard_max: int = 100
    adapt_dt: bool = True
    xi_points: int = 4
    output_dir: str = ""
    csv_name: str = "diagnostics.csv"
    output_every: int = 1
    vtk_every: int = 0
    particle_dump: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.k != 0:
            raise ValueError("only k=0 elements are implemented")
        if self.dt <= 0 or self.t_end < 0:
            raise ValueError("dt must be positive and t_end non-negative")
        if self.cfl_safety < 0:
            raise ValueError("cfl_safety must be >= 0")
        if self.clean_every < 0:
            raise ValueError("clean_every must be >= 0")
        for name in ("lower", "upper"):
            if len(getattr(self, name)) != 3:
                raise ValueError(f"{name} needs three values")
        if len(self.cells) != 3 or min(self.cells) < 1:
            raise ValueError("cells needs three positive values")
        if len(self.periodic) != 3:
            raise ValueError("periodic needs three flags")
        if self.n_particles < 0 or self.output_every < 1 or self.vtk_every < 0:
            raise ValueError("invalid particle or output settings")
        if self.c <= 0 or self.m <= 0:
            raise ValueError("c and m must be positive")

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def load_config(path: str | Path, base: RunConfig | None = None, **overrides) -> RunConfig:
    """Read an INI file on top of ``base`` (defaults when omitted)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    values = {}
    known_sections = {s for s, _ in SCHEMA}
    for section in parser.sections():
        if section not in known_sections:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if (section, key) not in SCHEMA:
                raise ValueError(f"unknown config key {key!r} in [{section}]")
            attr, parse, _ = SCHEMA[(section, key)]
            try:
                values[attr] = parse(raw)
            except ValueError as err:
                raise ValueError(f"bad value for [{section}] {key}: {raw!r} ({err})") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return replace(base, **values) if base is not None else RunConfig(**values)


def describe_schema() -> str:
    lines = []
    for (section, key), (_, _, doc) in SCHEMA.items():
        lines.append(f"[{section}] {key}: {doc}")
    return "\n".join(lines)


CONFIG_FIELDS = {f.name for f in fields(RunConfig)}
