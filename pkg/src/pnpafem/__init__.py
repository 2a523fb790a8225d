"""Adaptive P1 finite elements for steady drift-diffusion systems.

Conforming triangulations of polygonal 2D domains, recovery-based a
posteriori error indicators, and adaptive/uniform refinement drivers for
the coupled Poisson and Nernst-Planck equations.
"""

from pnpafem.afem_driver import (
    LoopConfig,
    RunRecord,
    adaptive_loop,
    fit_rate,
    mark_maximum,
    run_study,
    uniform_loop,
)
from pnpafem.estimator import EstimatorReport, build_report, effectivity
from pnpafem.mesh import (
    Mesh,
    MarkSet,
    PatchIndex,
    make_uniform_unit_square,
    mesh_size,
    patches,
    refine_marked,
    refine_uniform,
    write_legacy_vtk,
)
from pnpafem.nonlinear_solver import CoupledState, SolverConfig, solve_coupled
from pnpafem.pnp_problem import ManufacturedCase, get_case
from pnpafem.recovery import WeightScheme, clement_pi, flux_recover, gradient_recover

__all__ = [
    "CoupledState",
    "EstimatorReport",
    "LoopConfig",
    "ManufacturedCase",
    "MarkSet",
    "Mesh",
    "PatchIndex",
    "RunRecord",
    "SolverConfig",
    "WeightScheme",
    "adaptive_loop",
    "build_report",
    "clement_pi",
    "effectivity",
    "fit_rate",
    "flux_recover",
    "get_case",
    "gradient_recover",
    "make_uniform_unit_square",
    "mark_maximum",
    "mesh_size",
    "patches",
    "refine_marked",
    "refine_uniform",
    "run_study",
    "solve_coupled",
    "uniform_loop",
    "write_legacy_vtk",
]
