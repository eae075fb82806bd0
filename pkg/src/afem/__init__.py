"""Adaptive P1 finite elements for indefinite Helmholtz-type problems."""
from .driver import ConvergenceRecord, RunConfig, RunResult, run_afem
from .marking import MarkingStrategy, Strategy
from .mesh import Triangulation, refine, z_domain
from .problems import get_problem, z1_problem, z2_problem

__all__ = [
    "ConvergenceRecord", "RunConfig", "RunResult", "run_afem", "MarkingStrategy", "Strategy",
    "Triangulation", "refine", "z_domain", "get_problem", "z1_problem", "z2_problem",
]
