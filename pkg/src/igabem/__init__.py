"""Spline FEM-BEM coupling for curl-curl magnetostatics on multipatch domains.

Modules
-------
geometry
    Knot vectors, B-spline/NURBS patches, interface matching, the seven-patch ball.
quadrature
    Gauss rules, element adjacency and regularized rules for singular pairs.
derham
    Discrete de Rham complexes in the volume and on the boundary, traces, masses.
bem
    Boundary integral operators, layer potentials and the contraction diagnostic.
fem
    Curl-curl stiffness, reluctivity models, coupling pairings and loads.
solver
    Block system, gauged linear solves, Picard iteration, exterior evaluation.
harness
    Magnetized-ball benchmark, convergence studies and reports.
"""

from .bem import BoundaryOperatorSet, assemble_operators, eval_representation, steklov_contraction_estimate
from .derham import build_solenoidal_basis, build_surface_complex, build_volume_complex
from .fem import ProblemData, ReluctivityModel, build_coupling_spaces
from .geometry import MultipatchDomain, Patch, build_box, build_unit_ball
from .harness import StudyConfig, run_convergence_study, solve_benchmark
from .solver import PicardOptions, SolveOptions, assemble_block, solve_linear, solve_picard

__all__ = [
    "BoundaryOperatorSet",
    "MultipatchDomain",
    "Patch",
    "PicardOptions",
    "ProblemData",
    "ReluctivityModel",
    "SolveOptions",
    "StudyConfig",
    "assemble_block",
    "assemble_operators",
    "build_box",
    "build_coupling_spaces",
    "build_solenoidal_basis",
    "build_surface_complex",
    "build_unit_ball",
    "build_volume_complex",
    "eval_representation",
    "run_convergence_study",
    "solve_benchmark",
    "solve_linear",
    "solve_picard",
    "steklov_contraction_estimate",
]

__version__ = "0.1.0"
