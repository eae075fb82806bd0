"""The adaptive loop: solve, estimate, mark, refine.

A step whose discrete system is singular keeps the previous solution and
estimator value and refines uniformly. All instrumentation (errors against
the exact solution, Céa quotients, quasi-orthogonality, Galerkin
orthogonality, axiom quotients) is computed online from the current and the
previous step only, so memory stays proportional to the current mesh.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse.linalg as spla

from .estimator import IndicatorField, dump_indicators, estimate, measure_axioms
from .fem import (DiscreteSpace, ProblemSpec, SparseSystem, UnsupportedOperation, assemble,
                  build_space, energy_error_sq, exact_energy_functional, h1_error, prolongate)
from .marking import MarkingStrategy, doerfler_holds, mark
from .mesh import Triangulation, cardinality_bounds_check, prolongation_matrix, refine, son_counts, uniform_refine, write_mesh
from .solver import PIVOT_TOL, dump_matrix, solve


@dataclass
class RunConfig:
    problem: ProblemSpec
    strategy: MarkingStrategy = field(default_factory=MarkingStrategy)
    uniform: bool = False               # refine every element (baseline)
    max_elements: Optional[int] = None  # never solve on a larger mesh
    max_steps: Optional[int] = None
    eta_tol: Optional[float] = None
    errors: bool = True                 # exact-solution errors when available
    cea: bool = False
    quasi_orthogonality: bool = False
    galerkin_orthogonality: bool = False
    axioms: bool = False
    check_refinement: bool = True
    closure_ceiling: float = 20.0
    element_ceiling: int = 5_000_000
    pivot_tol: float = PIVOT_TOL
    initial_mesh: Optional[Triangulation] = None
    snapshot_every: int = 0             # keep (mesh, solution) every k steps; 0 = never
    dump_dir: Optional[Path] = None     # write mesh/matrix/indicator files per step
    timing: bool = True                 # False records wall_ms = 0 for byte-stable output

    def __post_init__(self):
        if self.max_elements is None and self.max_steps is None and self.eta_tol is None:
            raise ValueError("at least one stopping rule is required")


@dataclass
class ConvergenceRecord:
    step: int
    n_elements: int
    n_dofs: int
    eta: float
    marked_count: int
    h_max: float
    solved: bool
    h1_error: Optional[float] = None
    energy_error: Optional[float] = None
    cea_quotient: Optional[float] = None
    # quantities below refer to the pair (step - 1, step)
    qo_epsilon: Optional[float] = None
    galerkin_orthogonality: Optional[float] = None
    stability: Optional[float] = None
    reduction: Optional[float] = None
    reliability: Optional[float] = None
    correction: Optional[float] = None
    dorfler_ok: Optional[bool] = None
    closure_ratio: Optional[float] = None
    pivot_floor: float = 0.0
    wall_ms: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    """Records of one run plus optional snapshots; iterates over the records."""

    records: list
    snapshots: list = field(default_factory=list)
    final_mesh: Optional[Triangulation] = None
    max_area_defect: float = 0.0

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


@dataclass
class _Step:
    space: DiscreteSpace
    system: SparseSystem
    x: np.ndarray
    indicators: Optional[IndicatorField]
    eta: float


def galerkin_projection(space: DiscreteSpace, problem: ProblemSpec, system: SparseSystem):
    """Energy projection ``P u`` of the exact solution and ``|||u - P u|||^2``."""
    usq, au = exact_energy_functional(space, problem, system)
    K = system.stiffness.tocsc()
    pu = spla.splu(K).solve(au) if K.shape[0] else np.zeros(0)
    return pu, float(usq - au @ pu)


def cea_quotient(space: DiscreteSpace, problem: ProblemSpec, x: np.ndarray,
                 system: SparseSystem = None) -> Optional[float]:
    """``|||u - U||| / min_V |||u - V|||``; ``None`` when the best error vanishes."""
    if problem.exact is None:
        raise UnsupportedOperation("Céa quotient needs an exact solution")
    if system is None:
        system = assemble(space, problem)
    pu, best_sq = galerkin_projection(space, problem, system)
    if best_sq <= 0:
        return None
    e = np.asarray(x, dtype=float) - pu
    return float(np.sqrt(1.0 + (e @ (system.stiffness @ e)) / best_sq))


def quasi_orthogonality_epsilon(coarse: DiscreteSpace, x_coarse: np.ndarray, fine: DiscreteSpace,
                                x_fine: np.ndarray, fine_system: SparseSystem,
                                problem: ProblemSpec) -> Optional[float]:
    """``eps`` with ``|||u - U_c|||^2 = (1 - eps)(|||u - U_f|||^2 + |||U_f - U_c|||^2)``.

    Expanding the left side around ``U_f`` leaves only the cross term
    ``2 a(u - U_f, U_f - U_c)``, which is evaluated without cancellation.
    """
    usq, au = exact_energy_functional(fine, problem, fine_system)
    K = fine_system.stiffness
    d = x_fine - prolongate(coarse, fine, x_coarse)
    dk = float(d @ (K @ d))
    e_fine = energy_error_sq(fine, problem, fine_system, x_fine)
    den = e_fine + dk
    if den <= 0:
        return None
    return float(-2.0 * (d @ (au - K @ x_fine)) / den)


def galerkin_orthogonality_defect(coarse: DiscreteSpace, coarse_system: SparseSystem, fine: DiscreteSpace,
                                  fine_system: SparseSystem, x_coarse: np.ndarray, x_fine: np.ndarray) -> float:
    """``max_j |b(U_fine - U_coarse, phi_j)| / (|||U_fine||| |||phi_j|||)`` over coarse hats."""
    P = prolongation_matrix(coarse.mesh, fine.mesh)[fine.free][:, coarse.free]
    d = x_fine - P @ x_coarse
    r = P.T @ (fine_system.matrix @ d)
    norm_f = float(np.sqrt(max(x_fine @ (fine_system.stiffness @ x_fine), 0.0)))
    phi = np.sqrt(coarse_system.stiffness.diagonal())
    if norm_f == 0 or len(r) == 0:
        return 0.0
    return float(np.max(np.abs(r) / (norm_f * phi)))


def run_afem(config: RunConfig, callback: Callable[[ConvergenceRecord], None] = None) -> RunResult:
    problem = config.problem
    mesh = config.initial_mesh if config.initial_mesh is not None else problem.domain()
    n0 = mesh.n_elements
    has_exact = problem.exact is not None
    dump = Path(config.dump_dir) if config.dump_dir is not None else None
    if dump is not None:
        dump.mkdir(parents=True, exist_ok=True)

    result = RunResult(records=[])
    prev: Optional[_Step] = None
    history: list[float] = []
    marked_total = 0
    step = 0
    while True:
        if mesh.n_elements > config.element_ceiling:
            raise RuntimeError(f"mesh exceeds the element ceiling ({mesh.n_elements} elements)")
        t0 = time.perf_counter()
        space = build_space(mesh)
        system = assemble(space, problem)
        out = solve(system, config.pivot_tol)
        rec = ConvergenceRecord(step=step, n_elements=mesh.n_elements, n_dofs=space.dof_count,
                                eta=0.0, marked_count=0, h_max=float(np.sqrt(mesh.areas.max())),
                                solved=out.solved, pivot_floor=out.pivot_floor)
        if step > 0:
            rec.closure_ratio = (mesh.n_elements - n0) / marked_total if marked_total else None
            if rec.closure_ratio is not None and rec.closure_ratio > config.closure_ceiling:
                raise RuntimeError(f"closure ratio {rec.closure_ratio:.2f} exceeds {config.closure_ceiling}")

        if out.solved:
            x = out.solution
            ind = estimate(space, problem, x)
            rec.eta = ind.total
            if config.uniform:
                marked = np.arange(mesh.n_elements)
            else:
                marked = mark(config.strategy, ind, mesh.areas, history)
                rec.dorfler_ok = doerfler_holds(ind, marked, config.strategy.theta)
            nxt = refine(mesh, marked)
        else:
            # carry the previous iterate (zero on the initial mesh) and refine uniformly
            x = prolongate(prev.space, space, prev.x) if prev is not None else np.zeros(space.dof_count)
            ind = None
            rec.eta = prev.eta if prev is not None else 1.0
            marked = np.arange(mesh.n_elements)
            nxt = uniform_refine(mesh)
        rec.marked_count = len(marked)

        if has_exact and config.errors:
            rec.h1_error = h1_error(space, problem, x)
            rec.energy_error = float(np.sqrt(max(energy_error_sq(space, problem, system, x), 0.0)))
        if has_exact and config.cea and out.solved:
            rec.cea_quotient = cea_quotient(space, problem, x, system)
        if prev is not None:
            if has_exact and config.quasi_orthogonality:
                rec.qo_epsilon = quasi_orthogonality_epsilon(prev.space, prev.x, space, x, system, problem)
            if config.galerkin_orthogonality and out.solved and prev.indicators is not None:
                rec.galerkin_orthogonality = galerkin_orthogonality_defect(prev.space, prev.system, space,
                                                                           system, prev.x, x)
            if config.axioms and ind is not None and prev.indicators is not None:
                ax = measure_axioms((prev.space, prev.indicators, prev.x), (space, ind, x, system))
                rec.stability, rec.reduction, rec.reliability = ax.stability, ax.reduction, ax.reliability
                rec.correction = ax.correction_h1

        if dump is not None:
            write_mesh(mesh, dump / f"mesh_{step:03d}.txt")
            dump_matrix(system.matrix, dump / f"matrix_{step:03d}.txt")
            if ind is not None:
                dump_indicators(ind, dump / f"indicators_{step:03d}.csv")
        if config.snapshot_every and step % config.snapshot_every == 0:
            result.snapshots.append((step, mesh, space.to_vertex_values(x)))
        if config.check_refinement and len(marked):
            sons = son_counts(mesh, nxt)
            if len(sons) and (sons.min() < 2 or sons.max() > 4):
                raise RuntimeError("refinement produced an element with an invalid number of sons")
            if not cardinality_bounds_check(mesh.n_elements, nxt.n_elements):
                raise RuntimeError("refinement violates the element-count bounds")

        rec.wall_ms = 1e3 * (time.perf_counter() - t0) if config.timing else 0.0
        result.records.append(rec)
        if callback is not None:
            callback(rec)
        history.append(rec.eta)
        prev = _Step(space, system, x, ind, rec.eta)
        marked_total += len(marked)
        step += 1

        if config.max_steps is not None and step >= config.max_steps:
            break
        if config.eta_tol is not None and out.solved and rec.eta <= config.eta_tol:
            break
        if config.max_elements is not None and nxt.n_elements > config.max_elements:
            break
        mesh = nxt

    result.final_mesh = mesh
    result.max_area_defect = mesh.forest.max_area_defect
    return result


def linear_convergence_fit(records, tail: float = 0.6, min_points: int = 8) -> tuple[float, float]:
    """Fit ``eta_l ~ C q**l`` on the last ``tail`` fraction of solved steps.

    Returns ``(C_lin, q_lin)`` where ``C_lin`` is the envelope constant
    ``max_l eta_(l+k) / (q**k eta_l)`` over the tail.
    """
    recs = [r for r in records if r.solved and r.eta > 0]
    if len(recs) < min_points:
        raise ValueError(f"need at least {min_points} solved steps, got {len(recs)}")
    k = max(min_points, int(np.ceil(tail * len(recs))))
    recs = recs[-k:]
    steps = np.array([r.step for r in recs], dtype=float)
    le = np.log([r.eta for r in recs])
    slope = np.polyfit(steps, le, 1)[0]
    q = float(np.exp(slope))
    # max over pairs j >= i of eta_j / (q^(j-i) eta_i)
    z = le - steps * np.log(q)
    C = float(np.exp(np.max(z[None, :] - z[:, None], where=np.triu(np.ones((len(z),) * 2, bool)),
                            initial=0.0)))
    return C, q


def quasi_orthogonality_check(records) -> list[Optional[float]]:
    """Per-step ``eps`` values recorded by a run with ``quasi_orthogonality=True``."""
    vals = [r.qo_epsilon for r in records]
    if len(records) > 1 and all(v is None for v in vals[1:]):
        raise UnsupportedOperation("run was not instrumented for quasi-orthogonality")
    return vals
