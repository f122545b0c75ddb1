"""Air-gap objective J(u) = ||B_rad(u) - B_target||^2 on the circle Gamma_0 and its adjoint.

On a circle centered at the origin the radial induction equals the tangential
derivative of the potential, so with P1 elements the trace is piecewise
constant along the circle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import GapCircleError, MeshError
from .fem import (NewtonOptions, SparseOperator, _Factorized, assemble_newton_matrix,
                  assemble_stiffness)
from .materials import LINEAR, BHModel, DesignState
from .mesh import AIR, Mesh


@dataclass(frozen=True)
class TargetCurve:
    """Desired radial induction ``amplitude * sin(frequency * theta)`` in tesla."""

    amplitude: float = 0.5
    frequency: float = 4.0

    def __call__(self, theta):
        return self.amplitude * np.sin(self.frequency * np.asarray(theta, dtype=float))


@dataclass(frozen=True, eq=False)
class GapCircle:
    """Composite midpoint rule on the quarter circle of radius `radius`.

    ``tangent_grads[q, i]`` is grad(phi_i) . tau at point q for the i-th
    vertex ``nodes[q, i]`` of the containing triangle ``elements[q]``.
    """

    radius: float
    theta: np.ndarray
    weights: np.ndarray
    elements: np.ndarray
    tangents: np.ndarray
    nodes: np.ndarray
    tangent_grads: np.ndarray
    n_nodes: int

    @property
    def n_points(self) -> int:
        return len(self.theta)

    @property
    def points(self) -> np.ndarray:
        return self.radius * np.stack([np.cos(self.theta), np.sin(self.theta)], axis=1)


def build_gap_circle(mesh: Mesh, radius: float, n_q: int = 720, orientation: int = 1) -> GapCircle:
    """Locate the quadrature points of Gamma_0 in `mesh`.

    `orientation` = +1 uses the counterclockwise tangent (-sin, cos); -1 flips it.
    """
    if n_q < 8:
        raise GapCircleError("need at least 8 quadrature points")
    if not radius > 0:
        raise GapCircleError("radius must be positive")
    if orientation not in (1, -1):
        raise GapCircleError("orientation must be +1 or -1")
    dtheta = 0.5 * math.pi / n_q
    theta = (np.arange(n_q) + 0.5) * dtheta
    weights = np.full(n_q, radius * dtheta)
    pts = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    elems = np.empty(n_q, dtype=np.int64)
    start = 0
    for q, x in enumerate(pts):
        try:
            start = mesh.locate(x, start)
        except MeshError:
            raise GapCircleError(f"circle of radius {radius:g} leaves the mesh at theta={theta[q]:.4f}") from None
        if mesh.tags[start] != AIR:
            raise GapCircleError(
                f"circle of radius {radius:g} passes through non-air element {start} "
                f"(tag {mesh.tags[start]}) at theta={theta[q]:.4f}")
        elems[q] = start
    tau = orientation * np.stack([-np.sin(theta), np.cos(theta)], axis=1)
    tg = np.einsum("qij,qj->qi", mesh.grad_basis[elems], tau)
    return GapCircle(float(radius), theta, weights, elems, tau, mesh.triangles[elems].copy(),
                     tg, mesh.n_nodes)


def radial_flux_trace(gap: GapCircle, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.einsum("qi,qi->q", u[gap.nodes], gap.tangent_grads)


def objective(gap: GapCircle, target: TargetCurve, u) -> float:
    d = radial_flux_trace(gap, u) - target(gap.theta)
    return float(np.sum(gap.weights * d * d))


def objective_gradient(gap: GapCircle, target: TargetCurve, u) -> np.ndarray:
    """dJ/du as a full-length nodal vector."""
    d = radial_flux_trace(gap, u) - target(gap.theta)
    local = (2.0 * gap.weights * d)[:, None] * gap.tangent_grads
    return np.bincount(gap.nodes.ravel(), weights=local.ravel(), minlength=gap.n_nodes)


@dataclass
class AdjointSolveReport:
    p: np.ndarray
    residual: float
    mode: str
    operator: SparseOperator


def solve_adjoint(mesh: Mesh, model: BHModel, state: DesignState, u, gap: GapCircle,
                  target: TargetCurve, opts: NewtonOptions | None = None,
                  offset=None) -> AdjointSolveReport:
    """Solve (K + N)^T p = -dJ/du at the converged state `u`.

    K + N is symmetric, so the transpose is not formed; in linear mode N = 0.
    """
    opts = opts or NewtonOptions()
    if state.mode == LINEAR:
        A = assemble_stiffness(mesh, model, state, offset=offset)
    else:
        A = assemble_newton_matrix(mesh, model, state, u, offset)
    rhs = -objective_gradient(gap, target, u)
    free = A.free
    p = np.zeros(mesh.n_nodes)
    b = rhs[free]
    nb = np.linalg.norm(b)
    if nb > 0:
        p[free] = _Factorized(A.matrix).solve(b, opts.linear_tol)
        res = float(np.linalg.norm(A.matrix @ p[free] - b) / nb)
    else:
        res = 0.0
    return AdjointSolveReport(p, res, state.mode, A)
