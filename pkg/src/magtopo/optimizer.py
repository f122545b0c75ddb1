"""ON/OFF hole-carving optimization.

Each iteration solves the state and adjoint problems, evaluates the ON/OFF
sensitivities, picks the most negative local minima and switches the design
elements around them to air.  A carve that increases the objective is
reverted and its elements become tabu for the rest of the run, so the
best-so-far objective never increases.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import MagtopoError, MeshError, SolverError
from .fem import NewtonOptions, StateSolution, solve_state
from .materials import LINEAR, BHModel, DesignState, element_reluctivity
from .mesh import DESIGN, Mesh
from .objective import GapCircle, TargetCurve, build_gap_circle, objective, solve_adjoint
from .sensitivity import SensitivityField, onoff_sensitivities
from .validation import check_mesh, check_mode

log = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    max_iters: int = 29
    radius0: Optional[float] = None  # default: 2 x mean design-element diameter
    radius_decay: float = 0.9
    minima_per_iter: int = 1
    negative_threshold: float = 0.5
    allow_switch_on: bool = False
    stop_stagnation: int = 5

    def validate(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.minima_per_iter < 1:
            raise ValueError("minima_per_iter must be >= 1")
        if not 0 < self.radius_decay <= 1:
            raise ValueError("radius_decay must lie in (0, 1] (nonincreasing radii)")
        if self.radius0 is not None and self.radius0 < 0:
            raise ValueError("radius0 must be >= 0")
        if not 0 <= self.negative_threshold <= 1:
            raise ValueError("negative_threshold must lie in [0, 1]")
        if self.stop_stagnation < 1:
            raise ValueError("stop_stagnation must be >= 1")

    def radius(self, mesh: Mesh, it: int) -> float:
        r0 = self.radius0
        if r0 is None:
            r0 = 2.0 * float(mesh.diameters[mesh.design_elements].mean())
        return r0 * self.radius_decay ** (it - 1)


@dataclass
class IterationRecord:
    iteration: int
    J: float
    switched: int
    reverted: bool
    trial_J: float
    best_J: float
    n_on: int
    newton_iterations: int = 0
    newton_residual: float = 0.0
    changed: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64), repr=False)


@dataclass
class OptimizationHistory:
    records: List[IterationRecord] = field(default_factory=list)
    snapshots: List[np.ndarray] = field(default_factory=list)
    best_flags: Optional[np.ndarray] = None
    stop_reason: str = ""
    error: Optional[str] = None

    @property
    def J(self) -> np.ndarray:
        return np.array([r.J for r in self.records])

    @property
    def best_J(self) -> np.ndarray:
        return np.array([r.best_J for r in self.records])

    @property
    def initial_J(self) -> float:
        return self.records[0].J

    @property
    def final_best_J(self) -> float:
        return self.records[-1].best_J


def design_adjacency(mesh: Mesh) -> sp.csr_matrix:
    """Vertex-sharing adjacency among design elements (design-local indices)."""
    elems = mesh.design_elements
    n = len(elems)
    inc = sp.csr_matrix((np.ones(3 * n), (np.repeat(np.arange(n), 3), mesh.triangles[elems].ravel())),
                        shape=(n, mesh.n_nodes))
    adj = (inc @ inc.T).tocsr()
    adj.setdiag(0)
    adj.eliminate_zeros()
    return adj


def _local_extrema(values, eligible, adj, sign):
    """Design-local indices that beat all eligible neighbors; ties go to the lower id."""
    out = []
    key = sign * values
    for i in np.flatnonzero(eligible):
        nb = adj.indices[adj.indptr[i]:adj.indptr[i + 1]]
        nb = nb[eligible[nb]]
        if np.all((key[i] < key[nb]) | ((key[i] == key[nb]) & (i < nb))):
            out.append(i)
    return np.array(out, dtype=np.int64)


def _pick(values, eligible, adj, cfg: OptimizerConfig, sign: float) -> np.ndarray:
    if not eligible.any():
        return np.empty(0, dtype=np.int64)
    key = sign * values
    extreme = key[eligible].min()
    if not extreme < 0:
        return np.empty(0, dtype=np.int64)
    cand = _local_extrema(values, eligible, adj, sign)
    cand = cand[(key[cand] < 0) & (key[cand] <= cfg.negative_threshold * extreme)]
    order = np.lexsort((cand, key[cand]))
    return cand[order][: cfg.minima_per_iter]


def select_minima(sens: SensitivityField, mesh: Mesh, cfg: OptimizerConfig, state: DesignState = None,
                  tabu=None, adjacency=None) -> np.ndarray:
    """Centers of the most negative local sensitivity minima among ON design elements.

    Returns an ``(k, 2)`` array of element centroids, ``k <= cfg.minima_per_iter``.
    """
    idx = _minima_local(sens, mesh, cfg, state, tabu, adjacency)
    return mesh.centroids[mesh.design_elements[idx]]


def _minima_local(sens, mesh, cfg, state=None, tabu=None, adjacency=None):
    n = len(mesh.design_elements)
    eligible = np.ones(n, dtype=bool) if state is None else state.flags.copy()
    if tabu is not None:
        eligible &= ~tabu
    adj = design_adjacency(mesh) if adjacency is None else adjacency
    return _pick(np.asarray(sens.onoff, dtype=float), eligible, adj, cfg, 1.0)


def _carve(state: DesignState, mesh: Mesh, center, radius, tabu=None, turn_on=False) -> np.ndarray:
    if radius < 0:
        raise ValueError("radius must be >= 0")
    try:
        host = mesh.locate(center)
    except MeshError:
        raise MeshError(f"hole center {tuple(np.round(center, 6))} is outside the mesh") from None
    if mesh.tags[host] != DESIGN:
        raise MeshError(f"hole center {tuple(np.round(center, 6))} is outside the design region")
    elems = mesh.design_elements
    d = np.linalg.norm(mesh.centroids[elems] - np.asarray(center, dtype=float), axis=1)
    hit = d <= radius
    hit[np.searchsorted(elems, host)] = True
    hit &= ~state.flags if turn_on else state.flags
    if tabu is not None:
        hit &= ~tabu
    idx = np.flatnonzero(hit)
    state.flags[idx] = turn_on
    return idx


def carve_hole(state: DesignState, mesh: Mesh, center, radius: float, tabu=None) -> int:
    """Switch OFF every ON design element whose centroid lies within `radius` of
    `center`, always including the element containing `center`."""
    return len(_carve(state, mesh, center, radius, tabu))


def run_onoff(mesh: Mesh, model: BHModel, cfg: OptimizerConfig, gap: GapCircle,
              target: TargetCurve = TargetCurve(), mode: str = LINEAR,
              opts: Optional[NewtonOptions] = None, callback=None) -> OptimizationHistory:
    """Run the ON/OFF loop from the all-ON design.

    Solver failures stop the loop; the partial history is returned with
    ``history.error`` set.
    """
    cfg.validate()
    opts = opts or NewtonOptions()
    F = None
    state = DesignState(mesh, mode=mode)
    tabu = np.zeros(len(mesh.design_elements), dtype=bool)
    adj = design_adjacency(mesh)
    hist = OptimizationHistory()

    sol: StateSolution = solve_state(mesh, model, state, opts, F)
    J = objective(gap, target, sol.u)
    best = J
    hist.records.append(IterationRecord(0, J, 0, False, J, J, state.n_on, sol.iterations,
                                        float(sol.residual)))
    hist.snapshots.append(state.flags.copy())
    hist.best_flags = state.flags.copy()
    stagnant = 0
    hist.stop_reason = "max_iters"
    for it in range(1, cfg.max_iters + 1):
        try:
            adj_rep = solve_adjoint(mesh, model, state, sol.u, gap, target, opts)
        except SolverError as exc:
            hist.error, hist.stop_reason = str(exc), "solver_error"
            break
        sens = onoff_sensitivities(mesh, state, sol.u, adj_rep.p, it)
        radius = cfg.radius(mesh, it)
        off_idx = _pick(sens.onoff, state.flags & ~tabu, adj, cfg, 1.0)
        on_idx = np.empty(0, dtype=np.int64)
        if cfg.allow_switch_on:
            on_idx = _pick(sens.onoff, ~state.flags & ~tabu, adj, cfg, -1.0)
        if len(off_idx) == 0 and len(on_idx) == 0:
            hist.stop_reason = "no_minima"
            break
        trial = state.copy()
        changed = []
        for i in off_idx:
            changed.append(_carve(trial, mesh, mesh.centroids[mesh.design_elements[i]], radius, tabu))
        for i in on_idx:
            changed.append(_carve(trial, mesh, mesh.centroids[mesh.design_elements[i]], radius, tabu,
                                  turn_on=True))
        changed = np.unique(np.concatenate(changed)) if changed else np.empty(0, dtype=np.int64)
        try:
            new_sol = solve_state(mesh, model, trial, opts, F, u0=sol.u)
        except SolverError as exc:
            hist.error, hist.stop_reason = str(exc), "solver_error"
            break
        J_trial = objective(gap, target, new_sol.u)
        reverted = J_trial > J
        if reverted:
            tabu[changed] = True
        else:
            state, sol, J = trial, new_sol, J_trial
        if J < best:
            best, stagnant = J, 0
            hist.best_flags = state.flags.copy()
        else:
            stagnant += 1
        hist.records.append(IterationRecord(it, J, len(changed), reverted, J_trial, best,
                                            state.n_on, new_sol.iterations,
                                            float(new_sol.residual), changed))
        hist.snapshots.append(state.flags.copy())
        log.info("it %3d  J=%.6e  trial=%.6e  switched=%d%s", it, J, J_trial, len(changed),
                 "  (reverted)" if reverted else "")
        if callback is not None:
            callback(hist.records[-1], state, sol)
        if stagnant >= cfg.stop_stagnation:
            hist.stop_reason = "stagnation"
            break
    return hist


class OnOffOptimizer(BaseEstimator):
    """Estimator wrapper around `run_onoff`.

    ``fit(mesh)`` runs the loop on a tagged motor mesh and stores the outcome
    in fitted attributes (``history_``, ``design_``, ``best_J_``, ``gap_``).
    Hyper-parameters are plain constructor arguments so `get_params` /
    `set_params` and `sklearn.base.clone` work as usual.
    """

    def __init__(self, mode="linear", bh_model=None, gap_radius=0.0525, n_quadrature=720,
                 target_amplitude=0.5, target_frequency=4.0, max_iters=29, radius0=None,
                 radius_decay=0.9, minima_per_iter=1, negative_threshold=0.5,
                 allow_switch_on=False, stop_stagnation=5, newton_tol=1e-8, linear_tol=1e-10):
        self.mode = mode
        self.bh_model = bh_model
        self.gap_radius = gap_radius
        self.n_quadrature = n_quadrature
        self.target_amplitude = target_amplitude
        self.target_frequency = target_frequency
        self.max_iters = max_iters
        self.radius0 = radius0
        self.radius_decay = radius_decay
        self.minima_per_iter = minima_per_iter
        self.negative_threshold = negative_threshold
        self.allow_switch_on = allow_switch_on
        self.stop_stagnation = stop_stagnation
        self.newton_tol = newton_tol
        self.linear_tol = linear_tol

    def _config(self):
        return OptimizerConfig(self.max_iters, self.radius0, self.radius_decay, self.minima_per_iter,
                               self.negative_threshold, self.allow_switch_on, self.stop_stagnation)

    def fit(self, X, y=None):
        mesh = check_mesh(X, require_design=True)
        mode = check_mode(self.mode)
        model = self.bh_model if self.bh_model is not None else BHModel()
        self.gap_ = build_gap_circle(mesh, self.gap_radius, self.n_quadrature)
        self.target_ = TargetCurve(self.target_amplitude, self.target_frequency)
        opts = NewtonOptions(newton_tol=self.newton_tol, linear_tol=self.linear_tol)
        self.history_ = run_onoff(mesh, model, self._config(), self.gap_, self.target_, mode, opts)
        if self.history_.error is not None and len(self.history_.records) == 1:
            raise MagtopoError(self.history_.error)
        self.design_ = DesignState(mesh, self.history_.best_flags, mode)
        self.best_J_ = self.history_.final_best_J
        self.initial_J_ = self.history_.initial_J
        self.n_iter_ = self.history_.records[-1].iteration
        self.mesh_ = mesh
        return self

    def transform(self, X=None):
        """Element reluctivity of the best design (linear law), shape (n_elements,)."""
        check_is_fitted(self, "design_")
        model = self.bh_model if self.bh_model is not None else BHModel()
        return element_reluctivity(model, DesignState(self.mesh_, self.design_.flags, LINEAR))

    def score(self, X=None, y=None):
        """Relative objective decrease achieved by the best design (higher is better)."""
        check_is_fitted(self, "design_")
        return 1.0 - self.best_J_ / self.initial_J_
