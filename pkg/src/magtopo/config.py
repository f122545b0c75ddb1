"""Run configuration read from ``[section]`` / ``key = value`` text files (SI units)."""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional

from .exceptions import ConfigError, MeshError
from .fem import NewtonOptions
from .materials import MODES, NU0, NU_R
from .mesh import AIR, IRON, MotorGeometry
from .optimizer import OptimizerConfig

DEFAULT_H = 0.002


@dataclass
class RunConfig:
    geometry: MotorGeometry = field(default_factory=MotorGeometry)
    h: float = DEFAULT_H
    mesh_path: Optional[str] = None
    mode: str = "linear"
    nu0: float = NU0
    nu_r: float = NU_R
    s0: float = 1.5
    exponent: float = 4.0
    bh_table: Optional[str] = None
    gap_radius: Optional[float] = None
    n_quadrature: int = 720
    target_amplitude: float = 0.5
    target_frequency: float = 4.0
    orientation: int = 1
    solver: NewtonOptions = field(default_factory=NewtonOptions)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    inclusion: str = "disk"
    inclusion_panels: int = 256
    out_dir: str = "out"
    write_vtk: bool = True
    write_snapshots: bool = True

    @property
    def gap(self) -> float:
        return self.gap_radius if self.gap_radius is not None else self.geometry.r_gap

    def validate(self) -> "RunConfig":
        try:
            self.geometry.validate()
        except MeshError as exc:
            raise ConfigError(f"[geometry] {exc}") from None
        if self.mode not in MODES:
            raise ConfigError(f"[material] mode must be one of {MODES}")
        checks = [
            ("mesh", "h", self.h > 0),
            ("material", "nu0", self.nu0 > 0),
            ("material", "nu_r", 0 < self.nu_r <= 1),
            ("material", "s0", self.s0 > 0),
            ("material", "exponent", self.exponent >= 2),
            ("objective", "n_quadrature", self.n_quadrature >= 8),
            ("objective", "orientation", self.orientation in (1, -1)),
            ("objective", "gap_radius", self.gap > 0),
            ("solver", "newton_tol", self.solver.newton_tol > 0),
            ("solver", "linear_tol", self.solver.linear_tol > 0),
            ("solver", "max_iter", self.solver.max_iter >= 1),
            ("solver", "max_backtracks", self.solver.max_backtracks >= 0),
            ("sensitivity", "inclusion_panels", self.inclusion_panels >= 16),
        ]
        for section, key, ok in checks:
            if not ok:
                raise ConfigError(f"[{section}] {key} is out of range")
        try:
            self.optimizer.validate()
        except ValueError as exc:
            raise ConfigError(f"[optimizer] {exc}") from None
        for key, path in (("mesh.path", self.mesh_path), ("material.bh_table", self.bh_table)):
            if path is not None and not os.path.isfile(path):
                raise ConfigError(f"{key}: file not found: {path}")
        return self


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _conv(section, key, raw, kind):
    try:
        if kind is bool:
            return _BOOL[raw.strip().lower()]
        if kind == "optfloat":
            return None if raw.strip().lower() in ("", "auto", "none") else float(raw)
        if kind == "fill":
            return {"air": AIR, "iron": IRON}[raw.strip().lower()]
        if kind == "floats":
            return tuple(float(x) for x in raw.split(","))
        return kind(raw.strip())
    except (ValueError, KeyError):
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


# section -> key -> (target, attribute, converter)
_SCHEMA = {
    "geometry": {**{k: ("geometry", k, float) for k in (
        "r_shaft", "r_rotor_iron", "r_magnet", "r_rotor", "r_gap", "r_bore", "r_yoke",
        "magnet_span_deg", "magnetization", "slot_depth", "slot_opening")},
        "magnet_centers_deg": ("geometry", "magnet_centers_deg", "floats"),
        "pocket_fill": ("geometry", "pocket_fill", "fill"),
        "n_slots": ("geometry", "n_slots", int)},
    "mesh": {"h": ("run", "h", float), "path": ("run", "mesh_path", str)},
    "material": {"mode": ("run", "mode", str), "nu0": ("run", "nu0", float),
                 "nu_r": ("run", "nu_r", float), "s0": ("run", "s0", float),
                 "exponent": ("run", "exponent", float), "bh_table": ("run", "bh_table", str)},
    "objective": {"gap_radius": ("run", "gap_radius", "optfloat"),
                  "n_quadrature": ("run", "n_quadrature", int),
                  "target_amplitude": ("run", "target_amplitude", float),
                  "target_frequency": ("run", "target_frequency", float),
                  "orientation": ("run", "orientation", int)},
    "solver": {"newton_tol": ("solver", "newton_tol", float),
               "linear_tol": ("solver", "linear_tol", float),
               "max_newton": ("solver", "max_iter", int),
               "max_backtracks": ("solver", "max_backtracks", int)},
    "optimizer": {"max_iters": ("optimizer", "max_iters", int),
                  "radius0": ("optimizer", "radius0", "optfloat"),
                  "radius_decay": ("optimizer", "radius_decay", float),
                  "minima_per_iter": ("optimizer", "minima_per_iter", int),
                  "negative_threshold": ("optimizer", "negative_threshold", float),
                  "allow_switch_on": ("optimizer", "allow_switch_on", bool),
                  "stop_stagnation": ("optimizer", "stop_stagnation", int)},
    "sensitivity": {"inclusion": ("run", "inclusion", str),
                    "inclusion_panels": ("run", "inclusion_panels", int)},
    "output": {"dir": ("run", "out_dir", str), "vtk": ("run", "write_vtk", bool),
               "snapshots": ("run", "write_snapshots", bool)},
}


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    run = RunConfig()
    geo, solver, opt = {}, {}, {}
    targets = {"geometry": geo, "solver": solver, "optimizer": opt}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            target, attr, kind = _SCHEMA[section][key]
            value = _conv(section, key, raw, kind)
            if target == "run":
                if attr in ("mesh_path", "bh_table") and not os.path.isabs(value):
                    value = os.path.join(base_dir, value)
                if attr == "mode":
                    value = value.lower()
                setattr(run, attr, value)
            else:
                targets[target][attr] = value
    run.geometry = dataclasses.replace(run.geometry, **geo)
    run.solver = dataclasses.replace(run.solver, **solver)
    run.optimizer = dataclasses.replace(run.optimizer, **opt)
    return run


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)))
