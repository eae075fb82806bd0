"""Sparse direct solution of the (indefinite) discrete systems."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pymetis
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import SparseSystem, UnsupportedOperation

PIVOT_TOL = 1e-12
RESIDUAL_TOL = 1e-8
INF_SUP_CAP = 2000


class SolveStatus(enum.Enum):
    SOLVED = "Solved"
    SINGULAR = "Singular"


@dataclass
class SolveOutcome:
    status: SolveStatus
    solution: Optional[np.ndarray]
    pivot_floor: float
    residual: float = 0.0

    @property
    def solved(self) -> bool:
        return self.status is SolveStatus.SOLVED


def fill_reducing_order(B: sp.spmatrix) -> np.ndarray:
    """Nested-dissection ordering of the symmetrised sparsity graph of ``B``."""
    G = sp.csr_matrix(abs(B) + abs(B).T)
    G.setdiag(0)
    G.eliminate_zeros()
    if G.shape[0] < 2 or G.nnz == 0:
        return np.arange(G.shape[0])
    perm, _ = pymetis.nested_dissection(adjacency=pymetis.CSRAdjacency(G.indptr, G.indices))
    return np.asarray(perm, dtype=np.int64)


def solve(system: SparseSystem, pivot_tol: float = PIVOT_TOL) -> SolveOutcome:
    """LU with partial pivoting after a symmetric nested-dissection ordering.

    The system is declared singular when some pivot is below
    ``pivot_tol * max|B_ij|``, or when a row is structurally empty.
    """
    B = sp.csc_matrix(system.matrix)
    n = B.shape[0]
    if B.shape[0] != B.shape[1]:
        raise ValueError("matrix must be square")
    if n == 0:
        return SolveOutcome(SolveStatus.SOLVED, np.zeros(0), np.inf)
    B.eliminate_zeros()
    scale = float(np.max(np.abs(B.data))) if B.nnz else 0.0
    if scale == 0.0 or np.any(np.diff(B.tocsr().indptr) == 0):
        return SolveOutcome(SolveStatus.SINGULAR, None, 0.0)
    perm = fill_reducing_order(B)
    Bp = B[perm][:, perm].tocsc()
    try:
        lu = spla.splu(Bp, permc_spec="NATURAL", options=dict(SymmetricMode=True))
    except RuntimeError:
        return SolveOutcome(SolveStatus.SINGULAR, None, 0.0)
    pivots = np.abs(lu.U.diagonal())
    floor = float(pivots.min()) / scale
    if not np.isfinite(floor) or floor < pivot_tol:
        return SolveOutcome(SolveStatus.SINGULAR, None, floor)
    f = np.asarray(system.rhs, dtype=float)
    fp = f[perm]
    xp = lu.solve(fp)
    fn = float(np.linalg.norm(f))
    res = _relres(Bp, xp, fp, fn)
    if res > RESIDUAL_TOL:
        xp = xp + lu.solve(fp - Bp @ xp)
        res = _relres(Bp, xp, fp, fn)
    x = np.empty_like(xp)
    x[perm] = xp
    return SolveOutcome(SolveStatus.SOLVED, x, floor, res)


def _relres(B, x, f, fn):
    r = float(np.linalg.norm(B @ x - f))
    return r / fn if fn > 0 else r


def inf_sup_diagnostic(system: SparseSystem, h1_gram: SparseSystem) -> float:
    """Discrete inf-sup constant: smallest singular value of M^-1/2 B M^-1/2."""
    n = system.dof_count
    if n > INF_SUP_CAP:
        raise UnsupportedOperation(f"inf-sup diagnostic is capped at {INF_SUP_CAP} dofs (got {n})")
    if n == 0:
        return np.inf
    B = system.matrix.toarray()
    M = h1_gram.matrix.toarray()
    L = la.cholesky(M, lower=True)
    X = la.solve_triangular(L, B, lower=True)
    X = la.solve_triangular(L, X.T, lower=True).T
    return float(la.svdvals(X).min())


def discrete_eigenvalues(system: SparseSystem) -> np.ndarray:
    """Generalised eigenvalues of (stiffness, mass), ascending; dense."""
    K = system.stiffness.toarray()
    M = system.mass.toarray()
    return la.eigh(K, M, eigvals_only=True)


def dump_matrix(matrix, path) -> None:
    """Coordinate text dump, one ``i j value`` line per stored entry."""
    C = sp.coo_matrix(matrix)
    lines = [f"{i} {j} {v!r}" for i, j, v in zip(C.row.tolist(), C.col.tolist(), C.data.tolist())]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
