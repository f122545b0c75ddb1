"""Command line entry point: ``magtopo {solve,sensitivity,optimize,polarization}``.

Exit codes: 0 success, 1 solver/internal failure, 2 configuration or input error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys

import numpy as np

from . import export
from .config import RunConfig, load_config
from .exceptions import (ConfigError, ContrastError, GapCircleError, MaterialError, MeshError,
                         ShapeError, SolverError, UnsupportedModeError)
from .fem import flux_density, solve_state
from .materials import LINEAR, BHModel, DesignState, element_reluctivity, load_bh_csv
from .mesh import generate_motor_mesh, load_mesh
from .objective import TargetCurve, build_gap_circle, objective, radial_flux_trace, solve_adjoint
from .optimizer import run_onoff
from .polarization import panelize, polarization_matrix
from .sensitivity import (onoff_sensitivities, sensitivity_fd_oracle,
                          topological_derivative_field)

log = logging.getLogger("magtopo")

USAGE_ERRORS = (ConfigError, MeshError, MaterialError, ShapeError, ContrastError,
                GapCircleError, UnsupportedModeError)


@dataclasses.dataclass
class Problem:
    cfg: RunConfig
    mesh: object
    model: BHModel
    gap: object
    target: TargetCurve


def setup(cfg: RunConfig) -> Problem:
    cfg.validate()
    if cfg.mesh_path:
        with open(cfg.mesh_path, encoding="utf-8") as fh:
            mesh = load_mesh(fh)
    else:
        mesh = generate_motor_mesh(cfg.geometry, cfg.h)
    if cfg.bh_table:
        with open(cfg.bh_table, encoding="utf-8") as fh:
            model = load_bh_csv(fh, cfg.nu0, cfg.nu_r)
    else:
        model = BHModel(cfg.nu0, cfg.nu_r, cfg.s0, cfg.exponent)
    gap = build_gap_circle(mesh, cfg.gap, cfg.n_quadrature, cfg.orientation)
    return Problem(cfg, mesh, model, gap, TargetCurve(cfg.target_amplitude, cfg.target_frequency))


def _state_outputs(pb: Problem, state: DesignState, u, out, name="u.vtk", extra=None):
    mesh = pb.mesh
    b = radial_flux_trace(pb.gap, u)
    export.write_trace_csv(os.path.join(out, "trace.csv"), pb.gap.theta, b, pb.target(pb.gap.theta))
    if pb.cfg.write_vtk:
        g = np.linalg.norm(flux_density(mesh, u), axis=1)
        cells = {"B_abs": g, "nu": element_reluctivity(pb.model, state, g),
                 "region": mesh.tags, "flag": state.iron_mask().astype(np.int64)}
        cells.update(extra or {})
        export.write_vtk(os.path.join(out, name), mesh, {"u": u}, cells)


def cmd_solve(cfg: RunConfig) -> int:
    pb = setup(cfg)
    state = DesignState(pb.mesh, mode=cfg.mode)
    sol = solve_state(pb.mesh, pb.model, state, cfg.solver)
    J = objective(pb.gap, pb.target, sol.u)
    os.makedirs(cfg.out_dir, exist_ok=True)
    _state_outputs(pb, state, sol.u, cfg.out_dir)
    with open(os.path.join(cfg.out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"J = {J!r}\nmode = {cfg.mode}\nelements = {pb.mesh.n_elements}\n"
                 f"nodes = {pb.mesh.n_nodes}\nnewton_iterations = {sol.iterations}\n"
                 f"relative_residual = {float(sol.residual)!r}\n")
    print(f"J = {J!r}")
    return 0


def _topo(pb: Problem, u, p):
    if pb.cfg.mode != LINEAR:
        return None
    nu0, nu1 = pb.model.nu0, pb.model.nu1
    P = "disk" if pb.cfg.inclusion == "disk" else \
        polarization_matrix(panelize(pb.cfg.inclusion, pb.cfg.inclusion_panels), nu0, nu1)
    return topological_derivative_field(pb.mesh, u, p, nu0, nu1, P, LINEAR)


def cmd_sensitivity(cfg: RunConfig, fd_check: int = 0) -> int:
    pb = setup(cfg)
    state = DesignState(pb.mesh, mode=cfg.mode)
    sol = solve_state(pb.mesh, pb.model, state, cfg.solver)
    adj = solve_adjoint(pb.mesh, pb.model, state, sol.u, pb.gap, pb.target, cfg.solver)
    sens = onoff_sensitivities(pb.mesh, state, sol.u, adj.p)
    sens.topo = _topo(pb, sol.u, adj.p)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    export.write_sensitivity_csv(os.path.join(out, "sens.csv"), pb.mesh, sens)
    if cfg.write_vtk:
        cells = {"onoff": np.zeros(pb.mesh.n_elements)}
        cells["onoff"][sens.elements] = sens.onoff
        if sens.topo is not None:
            cells["topo"] = np.zeros(pb.mesh.n_elements)
            cells["topo"][sens.elements] = sens.topo
        export.write_vtk(os.path.join(out, "sens.vtk"), pb.mesh, {"u": sol.u, "p": adj.p}, cells)
    if fd_check:
        rng = np.random.default_rng(0)
        pick = np.sort(rng.choice(len(sens.elements), size=min(fd_check, len(sens.elements)),
                                  replace=False))
        worst = 0.0
        with open(os.path.join(out, "fd_check.csv"), "w", encoding="utf-8") as fh:
            fh.write("elem_id,onoff,fd,rel_err\n")
            for i in pick:
                fd = sensitivity_fd_oracle(pb.mesh, pb.model, state, int(sens.elements[i]),
                                           1e-4 * pb.model.nu1, pb.gap, pb.target, u0=sol.u)
                rel = abs(fd - sens.onoff[i]) / max(abs(sens.onoff[i]), 1e-300)
                worst = max(worst, rel)
                row = (float(sens.onoff[i]), float(fd), float(rel))
                fh.write(f"{sens.elements[i]}," + ",".join(repr(v) for v in row) + "\n")
        print(f"fd check: worst relative error {worst:.3e} over {len(pick)} elements")
    print(f"wrote {len(sens.elements)} sensitivities")
    return 0


def cmd_optimize(cfg: RunConfig) -> int:
    pb = setup(cfg)
    hist = run_onoff(pb.mesh, pb.model, cfg.optimizer, pb.gap, pb.target, cfg.mode, cfg.solver)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    export.write_history_csv(os.path.join(out, "history.csv"), hist)
    if cfg.write_snapshots:
        snap_dir = os.path.join(out, "designs")
        os.makedirs(snap_dir, exist_ok=True)
        for rec, flags in zip(hist.records, hist.snapshots):
            export.write_design_csv(os.path.join(snap_dir, f"design_{rec.iteration:03d}.csv"),
                                    pb.mesh, flags)
    best = DesignState(pb.mesh, hist.best_flags, cfg.mode)
    export.write_design_csv(os.path.join(out, "design.csv"), pb.mesh, best.flags)
    sol = solve_state(pb.mesh, pb.model, best, cfg.solver)
    _state_outputs(pb, best, sol.u, out, name="design.vtk")
    J0, Jb = hist.initial_J, hist.final_best_J
    print(f"J initial = {J0!r}\nJ best    = {Jb!r}\ndecrease  = {100 * (1 - Jb / J0):.2f}%\n"
          f"stop: {hist.stop_reason}")
    if hist.error:
        print(f"error: {hist.error}", file=sys.stderr)
        return 1
    return 0


def cmd_polarization(shape: str, nu0: float, nu1: float, n: int, refine: int = 0) -> int:
    P = polarization_matrix(panelize(shape, n), nu0, nu1)
    np.set_printoptions(precision=10, suppress=False)
    print(f"P ({shape}, nu0={nu0:g}, nu1={nu1:g}, {n} panels):")
    for row in P.matrix:
        print("  " + "  ".join(f"{v: .10e}" for v in row))
    if shape.strip() == "disk":
        ref = 2 * math.pi * (nu0 - nu1) / (nu0 + nu1)
        err = np.abs(P.matrix - ref * np.eye(2)).max() / abs(ref)
        print(f"analytic 2*pi*(nu0-nu1)/(nu0+nu1) = {ref:.10e}")
        print(f"relative error = {err:.3e}")
    if refine:
        print("panels  |P(n)-P(2n)|/|P(2n)|  factor")
        prev, prev_change = None, None
        ns = [n * 2 ** k for k in range(refine + 1)]
        mats = [polarization_matrix(panelize(shape, m), nu0, nu1).matrix for m in ns]
        for k in range(refine):
            change = np.linalg.norm(mats[k] - mats[k + 1]) / np.linalg.norm(mats[k + 1])
            factor = "" if prev_change is None else f"{prev_change / change:.3f}"
            print(f"{ns[k]:6d}  {change:.6e}  {factor}")
            prev_change = change
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magtopo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "sensitivity", "optimize"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--mesh", help="mesh file (overrides the generator)")
        p.add_argument("--mode", choices=("linear", "nonlinear"))
        p.add_argument("--seedless", action="store_true", help="accepted for compatibility; no effect")
        if name == "sensitivity":
            p.add_argument("--fd-check", type=int, default=0, metavar="K",
                           help="finite-difference check on K sampled design elements")
    p = sub.add_parser("polarization")
    p.add_argument("shape", help="disk | ellipse:a,b[,angle] | polygon:x1,y1;x2,y2;...")
    p.add_argument("nu0", type=float)
    p.add_argument("nu1", type=float)
    p.add_argument("n", type=int, nargs="?", default=256)
    p.add_argument("--refine", type=int, nargs="?", const=3, default=0, metavar="LEVELS",
                   help="print a panel-doubling self-convergence table")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "polarization":
            return cmd_polarization(args.shape, args.nu0, args.nu1, args.n, args.refine)
        cfg = load_config(args.config)
        if args.out:
            cfg.out_dir = args.out
        if args.mesh:
            cfg.mesh_path = args.mesh
        if args.mode:
            cfg.mode = args.mode
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "sensitivity":
            return cmd_sensitivity(cfg, args.fd_check)
        return cmd_optimize(cfg)
    except USAGE_ERRORS as exc:
        print(f"magtopo: error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"magtopo: solver failure: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report and map to exit code 1
        log.debug("internal error", exc_info=True)
        print(f"magtopo: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
