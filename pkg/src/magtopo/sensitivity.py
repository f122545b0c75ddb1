"""ON/OFF sensitivities, topological derivatives and a finite-difference oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import UnsupportedModeError
from .fem import NewtonOptions, element_gradients, solve_state
from .materials import LINEAR, BHModel, DesignState
from .mesh import DESIGN, Mesh
from .objective import GapCircle, TargetCurve, objective


@dataclass
class SensitivityField:
    """Per-design-element sensitivities, ordered like ``mesh.design_elements``.

    ``onoff[i]`` is dJ/dnu for element ``elements[i]``; ``topo`` holds the
    topological derivative at its centroid, or None in nonlinear mode.
    """

    elements: np.ndarray
    onoff: np.ndarray
    topo: Optional[np.ndarray] = None
    mode: str = LINEAR
    iteration: int = 0

    def as_dict(self):
        return dict(zip(self.elements.tolist(), self.onoff.tolist()))


def _check_lengths(mesh, *fields):
    for f in fields:
        if np.shape(f) != (mesh.n_nodes,):
            raise ValueError(f"nodal field has shape {np.shape(f)}, mesh has {mesh.n_nodes} nodes")


def onoff_sensitivities(mesh: Mesh, state: DesignState, u, p, iteration: int = 0) -> SensitivityField:
    """dJ/dnu_k = p^T (dK/dnu_k) u = |T_k| grad u . grad p on each design element."""
    _check_lengths(mesh, u, p)
    elems = mesh.design_elements
    gu = element_gradients(mesh, u)[elems]
    gp = element_gradients(mesh, p)[elems]
    sens = mesh.areas[elems] * np.einsum("ij,ij->i", gu, gp)
    return SensitivityField(elems.copy(), sens, None, state.mode, iteration)


def disk_polarization(nu0: float, nu1: float) -> np.ndarray:
    """Closed-form polarization matrix of the unit disk, 2 pi (nu0-nu1)/(nu0+nu1) I."""
    return 2.0 * math.pi * (nu0 - nu1) / (nu0 + nu1) * np.eye(2)


def topological_derivative_field(mesh: Mesh, u0, p0, nu0: float, nu1: float,
                                 P="disk", mode: str = LINEAR) -> np.ndarray:
    """G(x0) = nu1 grad u0^T P grad p0 at every design-element centroid.

    `P` is ``"disk"`` or a 2x2 matrix (e.g. from `polarization_matrix`).
    Only defined for the linear state equation.
    """
    if mode != LINEAR:
        raise UnsupportedModeError("the topological derivative is only available in linear mode")
    _check_lengths(mesh, u0, p0)
    if isinstance(P, str):
        if P != "disk":
            raise ValueError(f"unknown inclusion {P!r}")
        P = disk_polarization(nu0, nu1)
    P = np.asarray(getattr(P, "matrix", P), dtype=float)
    elems = mesh.design_elements
    gu = element_gradients(mesh, u0)[elems]
    gp = element_gradients(mesh, p0)[elems]
    return nu1 * np.einsum("ij,jk,ik->i", gu, P, gp)


def interior_design_mask(mesh: Mesh) -> np.ndarray:
    """Design elements whose vertices touch only design elements."""
    indptr, around = mesh.node_elements
    node_ok = np.array([np.all(mesh.tags[around[indptr[i]:indptr[i + 1]]] == DESIGN)
                        for i in range(mesh.n_nodes)])
    return node_ok[mesh.triangles[mesh.design_elements]].all(axis=1)


def sensitivity_fd_oracle(mesh: Mesh, model: BHModel, state: DesignState, elem: int, h: float,
                          gap: GapCircle, target: TargetCurve,
                          opts: Optional[NewtonOptions] = None, u0=None) -> float:
    """Central difference (J(nu_k + h) - J(nu_k - h)) / 2h from two full state solves.

    The shift is added to element `elem`'s reluctivity; in nonlinear mode it is
    added on top of the curve value.
    """
    opts = opts or NewtonOptions(newton_tol=1e-12)
    vals = []
    for sign in (1.0, -1.0):
        off = np.zeros(mesh.n_elements)
        off[elem] = sign * h
        sol = solve_state(mesh, model, state, opts, u0=u0, offset=off)
        vals.append(objective(gap, target, sol.u))
    return (vals[0] - vals[1]) / (2.0 * h)
