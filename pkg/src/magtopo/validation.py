"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

import numpy as np

from .exceptions import MeshError, UnsupportedModeError
from .materials import MODES
from .mesh import Mesh


def check_mesh(mesh, require_design=False, require_magnets=False) -> Mesh:
    if not isinstance(mesh, Mesh):
        raise TypeError(f"expected a Mesh, got {type(mesh).__name__}")
    if require_design and len(mesh.design_elements) == 0:
        raise MeshError("mesh has no DESIGN elements")
    if require_magnets and not mesh.magnets:
        raise MeshError("mesh has no magnets")
    return mesh


def check_mode(mode) -> str:
    m = str(mode).lower()
    if m not in MODES:
        raise UnsupportedModeError(f"mode must be one of {MODES}, got {mode!r}")
    return m


def check_nodal_field(mesh: Mesh, u, name="u") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise ValueError(f"{name} has shape {u.shape}; expected ({mesh.n_nodes},)")
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{name} contains non-finite values")
    return u


def check_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p.reshape(1, -1)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {p.shape}")
    return p
