"""Active source identification for steady advection-diffusion flows.

Finite-element forward model, POD reduction, adjoint-based tower source
fitting and a Fisher-information measurement planner, wired together by
:func:`asi.mission.run_asi`.
"""

from .estimators import PODReducer, SourceIdentifier
from .fem import SingularSystemError
from .geometry import Box, Domain, Mesh, build_mesh, decompose_convex
from .mission import DESK_CONFIG, run_asi
from .planner import PlannerState, next_best
from .rom import ReducedModel, build_reduced_model
from .si import NoSourceDetected, SiProblem, sa_initialize, solve_si
from .source import SourceParams

__version__ = "0.1.0"

__all__ = [
    "Box", "DESK_CONFIG", "Domain", "Mesh", "NoSourceDetected", "PODReducer", "PlannerState",
    "ReducedModel", "SingularSystemError", "SiProblem", "SourceIdentifier", "SourceParams",
    "build_mesh", "build_reduced_model", "decompose_convex", "next_best", "run_asi",
    "sa_initialize", "solve_si",
]
