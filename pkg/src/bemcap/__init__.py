"""Adaptive lowest-order BEM for the electrostatic capacity of closed polyhedra."""

from .driver import (CUBE_REFERENCE, AdaptiveError, AdaptiveRecord, AdaptiveResult, RunConfig,
                     capacity_value, rate_fit, run_adaptive)
from .estimator import dorfler_mark, residual_indicators, zz_indicators
from .io import export_vtk, load_off, read_history, save_off, write_history
from .mesh import (BaryMesh, DualMesh, MeshError, StarParams, Triangulation, build_bary, build_dual,
                   generate_geometry, refine_nvb, refine_uniform)
from .operators import (CapacitySystem, QuadratureOptions, assemble_single_layer,
                        build_capacity_system, build_primal_system)
from .quadrature import classify_pair, pair_integral, triangle_gauss_rule
from .solver import ConvergenceError, gmres, solve_capacity, solve_primal

__version__ = "0.1.0"
