"""P1 finite elements for -div(nu grad u) = F with u = 0 on the Dirichlet boundary.

Nodal vectors (potential, adjoint, loads) are full length ``mesh.n_nodes``;
Dirichlet entries of solutions are exactly zero and Dirichlet entries of
load vectors are ignored by the solvers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import SolverError
from .materials import LINEAR, NONLINEAR, BHModel, DesignState, element_reluctivity
from .mesh import Mesh


@dataclass(eq=False)
class SparseOperator:
    """Assembled matrix on all nodes plus the free-DOF restriction."""

    full: sp.csr_matrix
    free: np.ndarray

    @cached_property
    def matrix(self) -> sp.csc_matrix:
        return self.full[self.free][:, self.free].tocsc()

    def matvec(self, u: np.ndarray) -> np.ndarray:
        """Apply the reduced operator to a full nodal vector; result is full length."""
        out = np.zeros(self.full.shape[0])
        out[self.free] = self.matrix @ u[self.free]
        return out


@dataclass
class NewtonOptions:
    newton_tol: float = 1e-8
    linear_tol: float = 1e-10
    max_iter: int = 50
    max_backtracks: int = 30
    armijo: float = 1e-4
    backtrack_factor: float = 0.5


@dataclass
class StateSolution:
    u: np.ndarray
    mode: str
    iterations: int = 0
    residuals: List[float] = field(default_factory=list)
    step_lengths: List[float] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def element_gradients(mesh: Mesh, u) -> np.ndarray:
    """(M, 2) constant gradient of the P1 field `u` on every triangle."""
    u = np.asarray(u, dtype=float)
    return np.einsum("mi,mij->mj", u[mesh.triangles], mesh.grad_basis)


def flux_density(mesh: Mesh, u) -> np.ndarray:
    """(M, 2) induction B = (du/dy, -du/dx) per element."""
    g = element_gradients(mesh, u)
    return np.stack([g[:, 1], -g[:, 0]], axis=1)


def _scatter(mesh: Mesh, local: np.ndarray) -> np.ndarray:
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_rhs(mesh: Mesh, current_density: Optional[Callable] = None) -> np.ndarray:
    """Load vector <F, phi_i> = int (J phi_i + M_perp . grad phi_i) dx.

    The magnet term is exact for piecewise-constant M.  `current_density`
    is an optional callable ``J(x, y)`` integrated with the edge-midpoint rule
    (exact for quadratic J).
    """
    mag = mesh.element_magnetization()
    mperp = np.stack([-mag[:, 1], mag[:, 0]], axis=1)
    local = mesh.areas[:, None] * np.einsum("mij,mj->mi", mesh.grad_basis, mperp)
    F = _scatter(mesh, local)
    if current_density is not None:
        p = mesh.nodes[mesh.triangles]
        mids = 0.5 * (p + p[:, [1, 2, 0]])  # midpoints of edges (0,1), (1,2), (2,0)
        jv = np.stack([current_density(mids[:, k, 0], mids[:, k, 1]) for k in range(3)], axis=1)
        jv = np.broadcast_to(np.asarray(jv, dtype=float), (mesh.n_elements, 3))
        # phi_i is 1/2 at the two midpoints of edges touching vertex i
        touching = np.array([[1, 0, 1], [1, 1, 0], [0, 1, 1]], dtype=float)
        local = (mesh.areas / 3.0)[:, None] * 0.5 * jv @ touching.T
        F = F + _scatter(mesh, local)
    return F


def _stiffness_local(mesh: Mesh, nu: np.ndarray) -> np.ndarray:
    G = mesh.grad_basis
    return (nu * mesh.areas)[:, None, None] * np.einsum("mik,mjk->mij", G, G)


def assemble_stiffness(mesh: Mesh, model: BHModel, state: DesignState, u=None,
                       offset=None) -> SparseOperator:
    """K(u) with element entries nu_T |T| grad phi_i . grad phi_j."""
    s = None
    if state.mode == NONLINEAR and u is not None:
        s = np.linalg.norm(element_gradients(mesh, u), axis=1)
    nu = element_reluctivity(model, state, s, offset)
    return SparseOperator(_assemble(mesh, _stiffness_local(mesh, nu)), mesh.free_nodes)


def assemble_newton_matrix(mesh: Mesh, model: BHModel, state: DesignState, u,
                           offset=None) -> SparseOperator:
    """Jacobian K(u) + N(u) of the residual K(u)u - F.

    N has element entries (nu'(s)/s) |T| (grad u . grad phi_i)(grad u . grad phi_j)
    on iron elements, s = |grad u|_T; it vanishes in linear mode.
    """
    if state.mode == LINEAR:
        return assemble_stiffness(mesh, model, state, u, offset)
    g = element_gradients(mesh, u)
    s = np.linalg.norm(g, axis=1)
    nu = element_reluctivity(model, state, s, offset)
    local = _stiffness_local(mesh, nu)
    iron = state.iron_mask()
    coef = np.where(iron, model.dnu_over_s(s), 0.0) * mesh.areas
    w = np.einsum("mij,mj->mi", mesh.grad_basis, g)
    # form w_i w_j first so the element matrix is bitwise symmetric
    local = local + coef[:, None, None] * (w[:, :, None] * w[:, None, :])
    return SparseOperator(_assemble(mesh, local), mesh.free_nodes)


def residual(mesh: Mesh, model: BHModel, state: DesignState, u, F, offset=None) -> np.ndarray:
    """Full-length K(u)u - F with Dirichlet entries zeroed."""
    g = element_gradients(mesh, u)
    s = np.linalg.norm(g, axis=1) if state.mode == NONLINEAR else None
    nu = element_reluctivity(model, state, s, offset)
    local = (nu * mesh.areas)[:, None] * np.einsum("mij,mj->mi", mesh.grad_basis, g)
    r = _scatter(mesh, local) - F
    r[mesh.dirichlet_nodes] = 0.0
    return r


class _Factorized:
    """Sparse LU of a reduced SPD matrix with residual-checked solves."""

    def __init__(self, A: sp.spmatrix):
        self.A = sp.csc_matrix(A)
        self.lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A") if self.A.shape[0] else None

    def solve(self, b: np.ndarray, tol: float = 1e-10, refine: int = 3) -> np.ndarray:
        if self.A.shape[0] == 0:
            return np.zeros(0)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return np.zeros_like(b)
        x = self.lu.solve(b)
        res = np.linalg.norm(b - self.A @ x) / nb
        for _ in range(refine):
            if res <= tol:
                break
            x = x + self.lu.solve(b - self.A @ x)
            res = np.linalg.norm(b - self.A @ x) / nb
        if not np.isfinite(res) or res > tol:
            raise SolverError(f"linear solve reached relative residual {res:.3e} > {tol:.1e}",
                              residual=res)
        return x


def solve_linear(K: SparseOperator, F, tol: float = 1e-10, method: str = "direct",
                 maxiter: int = 20000) -> np.ndarray:
    """Solve K u = F on the free DOFs; returns a full nodal vector.

    ``method="direct"`` uses a sparse LU with iterative refinement,
    ``method="cg"`` Jacobi-preconditioned conjugate gradients.  Either way
    the relative residual is checked against `tol` and `SolverError` carries
    the achieved value on failure.
    """
    F = np.asarray(F, dtype=float)
    u = np.zeros(K.full.shape[0])
    b = F[K.free]
    if method == "direct":
        u[K.free] = _Factorized(K.matrix).solve(b, tol)
        return u
    if method != "cg":
        raise ValueError(f"unknown method {method!r}")
    A = K.matrix
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return u
    dinv = 1.0 / A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda x: dinv * x)
    x, _ = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
    res = np.linalg.norm(b - A @ x) / nb
    if res > tol:
        raise SolverError(f"CG stopped at relative residual {res:.3e} after {maxiter} iterations",
                          residual=res)
    u[K.free] = x
    return u


def solve_state(mesh: Mesh, model: BHModel, state: DesignState,
                opts: Optional[NewtonOptions] = None, F=None, u0=None,
                offset=None) -> StateSolution:
    """Solve K(u) u = F.

    Linear mode is a single solve.  Nonlinear mode runs Newton with Jacobian
    K + N and backtracking on ||r|| (Armijo), starting from `u0` or zero.
    """
    opts = opts or NewtonOptions()
    if F is None:
        F = assemble_rhs(mesh)
    F = np.asarray(F, dtype=float)
    free = mesh.free_nodes
    nF = np.linalg.norm(F[free])
    if nF == 0.0:
        return StateSolution(np.zeros(mesh.n_nodes), state.mode, 0, [0.0])

    if state.mode == LINEAR:
        K = assemble_stiffness(mesh, model, state, offset=offset)
        u = solve_linear(K, F, opts.linear_tol)
        r = np.linalg.norm((K.matrix @ u[free]) - F[free]) / nF
        return StateSolution(u, LINEAR, 1, [r])

    u = np.zeros(mesh.n_nodes) if u0 is None else np.array(u0, dtype=float)
    u[mesh.dirichlet_nodes] = 0.0
    r = residual(mesh, model, state, u, F, offset)
    rn = np.linalg.norm(r) / nF
    trace, steps = [rn], []
    for it in range(1, opts.max_iter + 1):
        if rn <= opts.newton_tol:
            return StateSolution(u, NONLINEAR, it - 1, trace, steps)
        J = assemble_newton_matrix(mesh, model, state, u, offset)
        delta = np.zeros(mesh.n_nodes)
        delta[free] = _Factorized(J.matrix).solve(-r[free], opts.linear_tol)
        t = 1.0
        for _ in range(opts.max_backtracks + 1):
            trial = u + t * delta
            r_trial = residual(mesh, model, state, trial, F, offset)
            rn_trial = np.linalg.norm(r_trial) / nF
            if rn_trial <= (1.0 - opts.armijo * t) * rn:
                break
            t *= opts.backtrack_factor
        else:
            raise SolverError(
                f"Newton stagnated at iteration {it}: no decrease of |r| after "
                f"{opts.max_backtracks} backtracks (|r|/|F| = {rn:.3e})",
                residual=rn, trace=trace)
        u, r, rn = trial, r_trial, rn_trial
        trace.append(rn)
        steps.append(t)
    if rn <= opts.newton_tol:
        return StateSolution(u, NONLINEAR, opts.max_iter, trace, steps)
    raise SolverError(f"Newton did not converge in {opts.max_iter} iterations "
                      f"(|r|/|F| = {rn:.3e})", residual=rn, trace=trace)


def l2_error(mesh: Mesh, u, exact: Callable) -> float:
    """L2 norm of u_h - exact using a degree-4 six-point rule per triangle."""
    # Dunavant degree 4
    a, b = 0.445948490915965, 0.091576213509771
    wa, wb = 0.223381589678011, 0.109951743655322
    bary = np.array([[a, a, 1 - 2 * a], [a, 1 - 2 * a, a], [1 - 2 * a, a, a],
                     [b, b, 1 - 2 * b], [b, 1 - 2 * b, b], [1 - 2 * b, b, b]])
    w = np.array([wa] * 3 + [wb] * 3)
    p = mesh.nodes[mesh.triangles]
    xq = np.einsum("qi,mij->mqj", bary, p)
    uq = np.einsum("qi,mi->mq", bary, np.asarray(u)[mesh.triangles])
    err = (uq - exact(xq[..., 0], xq[..., 1])) ** 2
    return float(np.sqrt(np.sum(mesh.areas[:, None] * w[None, :] * err)))
