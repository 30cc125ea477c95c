"""Landmark-based output-feedback synthesis over convex cell decompositions."""
from .geometry import (ConvexCell, Environment, ExitSpec, GeometryError, HalfSpace, exit_spec,
                       halfspaces_from_vertices, lyapunov_from_vertices_2d,
                       split_cell_at_interior_goal, validate_environment)
from .lp import LinearProgram, LpSolution, dualize_max, solve
from .planner import CellGraph, ExitPlan, PlanningError, build_graph, plan_patrol, plan_stabilization
from .simulate import DeformationMap, Trajectory, deform_and_replay, monitor, run
from .synthesis import (CellController, CellProgram, SynthesisError, assemble_cell_lp,
                        check_stationary_point, make_program, synthesize_cell, synthesize_plan)
from .transversal import (BarrierRow, LinearSystem, TransversalCoeffs, barrier_rows,
                          coeffs_from_poles, double_integrator, relative_degree, single_integrator)

__version__ = "0.1.0"
