"""2D magnetostatic topology optimization with ON/OFF sensitivities and topological derivatives."""
from .exceptions import (ConfigError, ContrastError, DegenerateElementError, GapCircleError,
                         MagtopoError, MaterialError, MeshError, ShapeError, SolverError,
                         UnsupportedModeError)
from .mesh import (AIR, DESIGN, IRON, MAGNET_BASE, Mesh, MotorGeometry, annulus_mesh,
                   generate_motor_mesh, load_mesh, rectangle_mesh, save_mesh)
from .materials import (LINEAR, NONLINEAR, NU0, NU_R, BHModel, DesignState, build_bh_table,
                        element_reluctivity, load_bh_csv, reluctivity, reluctivity_derivative)
from .fem import (NewtonOptions, StateSolution, assemble_newton_matrix, assemble_rhs,
                  assemble_stiffness, flux_density, residual, solve_linear, solve_state)
from .objective import (GapCircle, TargetCurve, build_gap_circle, objective, objective_gradient,
                        radial_flux_trace, solve_adjoint)
from .sensitivity import (SensitivityField, disk_polarization, onoff_sensitivities,
                          sensitivity_fd_oracle, topological_derivative_field)
from .polarization import (InclusionShape, PolarizationMatrix, disk, ellipse,
                           ellipse_polarization_exact, panelize, polarization_matrix, polygon,
                           solve_density)
from .optimizer import (OnOffOptimizer, OptimizationHistory, OptimizerConfig, carve_hole,
                        run_onoff, select_minima)
from .config import RunConfig, load_config, parse_config

__version__ = "0.1.0"
