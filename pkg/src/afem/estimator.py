"""Residual a posteriori error indicators and axiom instrumentation."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .fem import DiscreteSpace, ProblemSpec, hat_gradients, neumann_edges, prolongate
from .mesh import is_refinement_of
from .quadrature import edge_rule, standard_rule

Q_RED = 2 ** -0.5


@dataclass
class IndicatorField:
    eta_sq: np.ndarray          # per element, squared
    volume_sq: np.ndarray = None
    jump_sq: np.ndarray = None
    neumann_sq: np.ndarray = None

    @property
    def total(self) -> float:
        return float(np.sqrt(self.eta_sq.sum()))

    def subset(self, idx) -> float:
        return float(np.sqrt(self.eta_sq[idx].sum()))


def _grad_U(space: DiscreteSpace, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = space.to_vertex_values(np.asarray(x, dtype=float))
    G = hat_gradients(space.mesh)
    return np.einsum("mkd,mk->md", G, v[space.mesh.triangles]), v


def _residual_at(space, problem, v, gradU, quad):
    """Element residual ``f + div(A grad U) - b.grad U - c U`` at quadrature points (P1: div term 0)."""
    mesh = space.mesh
    _, b, c = problem.coefficients()
    T = mesh.triangles[quad.elem]
    Uq = np.einsum("qk,qk->q", quad.bary, v[T])
    gU = gradU[quad.elem]
    fq = problem.rhs(quad.points[:, 0], quad.points[:, 1])
    return fq - (gU @ b) - c * Uq


def estimate(space: DiscreteSpace, problem: ProblemSpec, x: np.ndarray) -> IndicatorField:
    """Residual indicators ``eta(T)^2``.

    ``h_T^2 ||R_T||^2 + h_T ||[(A grad U).n]||^2_{dT cap Omega} + h_T ||g - (A grad U).n||^2_{dT cap Gamma_N}``
    with ``h_T = |T|^(1/2)``; each interior edge contributes to both neighbours.
    """
    mesh = space.mesh
    M = mesh.n_elements
    A, _, _ = problem.coefficients()
    h = np.sqrt(mesh.areas)
    gradU, v = _grad_U(space, x)
    flux = gradU @ A.T

    quad = standard_rule(mesh.coords)
    R = _residual_at(space, problem, v, gradU, quad)
    vol = h ** 2 * quad.element_sum(R ** 2, M)

    # interior jumps: constant per edge for P1
    jump = np.zeros(M)
    e2 = mesh.edge2el
    inner = np.flatnonzero(e2[:, 1] >= 0)
    if len(inner):
        E = mesh.edges[inner]
        d = mesh.vertices[E[:, 1]] - mesh.vertices[E[:, 0]]
        length = np.hypot(d[:, 0], d[:, 1])
        n = np.stack([d[:, 1], -d[:, 0]], axis=1) / length[:, None]
        k1, k2 = e2[inner, 0], e2[inner, 1]
        jmp = np.einsum("ed,ed->e", flux[k1] - flux[k2], n)
        contrib = length * jmp ** 2
        jump += np.bincount(k1, weights=h[k1] * contrib, minlength=M)
        jump += np.bincount(k2, weights=h[k2] * contrib, minlength=M)

    neu = np.zeros(M)
    _, el, _, _, p0, p1, normal, length = neumann_edges(mesh)
    if len(el) and problem.g is not None:
        t, w = edge_rule(3)
        X = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]
        nx = np.broadcast_to(normal[:, None, 0], X.shape[:2])
        ny = np.broadcast_to(normal[:, None, 1], X.shape[:2])
        gq = problem.neumann(X[..., 0], X[..., 1], nx, ny)
        dn = np.einsum("ed,ed->e", flux[el], normal)
        r = np.sum(w[None, :] * (gq - dn[:, None]) ** 2, axis=1) * length
        neu += np.bincount(el, weights=h[el] * r, minlength=M)
    elif len(el):
        dn = np.einsum("ed,ed->e", flux[el], normal)
        neu += np.bincount(el, weights=h[el] * length * dn ** 2, minlength=M)

    return IndicatorField(vol + jump + neu, vol, jump, neu)


def oscillation(space: DiscreteSpace, problem: ProblemSpec, x: np.ndarray, q: int = 0) -> np.ndarray:
    """Per-element ``osc(T)^2`` for polynomial degree ``q`` in {0, 1}.

    Element term ``h_T^2 min_{Q in P^q} ||R_T - Q||^2``; the P1 flux jumps are
    edgewise constant and contribute nothing. Neumann edges add
    ``h_T min_{Q in P^q(E)} ||g - Q||^2_E``.
    """
    if q not in (0, 1):
        raise ValueError("oscillation supports q in {0, 1}")
    mesh = space.mesh
    M = mesh.n_elements
    h = np.sqrt(mesh.areas)
    gradU, v = _grad_U(space, x)
    quad = standard_rule(mesh.coords)
    R = _residual_at(space, problem, v, gradU, quad)
    nq = len(quad.weight) // M
    Rm = R.reshape(M, nq)
    W = quad.weight.reshape(M, nq)
    if q == 0:
        basis = np.ones((M, nq, 1))
    else:
        basis = quad.bary.reshape(M, nq, 3)
    G = np.einsum("mq,mqi,mqj->mij", W, basis, basis)
    rhs = np.einsum("mq,mqi,mq->mi", W, basis, Rm)
    coef = np.linalg.solve(G, rhs[..., None])[..., 0]
    proj = np.einsum("mqi,mi->mq", basis, coef)
    osc = h ** 2 * np.sum(W * (Rm - proj) ** 2, axis=1)

    _, el, _, _, p0, p1, normal, length = neumann_edges(mesh)
    if len(el) and problem.g is not None:
        t, w = edge_rule(3)
        X = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]
        nx = np.broadcast_to(normal[:, None, 0], X.shape[:2])
        ny = np.broadcast_to(normal[:, None, 1], X.shape[:2])
        gq = problem.neumann(X[..., 0], X[..., 1], nx, ny)
        if q == 0:
            basis_e = np.ones((len(t), 1))
        else:
            basis_e = np.stack([1 - t, t], axis=1)
        Ge = basis_e.T @ (w[:, None] * basis_e)
        ce = np.linalg.solve(Ge, (basis_e.T @ (w[:, None] * gq.T)))
        pe = (basis_e @ ce).T
        r = np.sum(w[None, :] * (gq - pe) ** 2, axis=1) * length
        osc += np.bincount(el, weights=h[el] * r, minlength=M)
    return osc


def dump_indicators(indicators: IndicatorField, path) -> None:
    rows = ["element_id,eta_sq"] + [f"{i},{v!r}" for i, v in enumerate(indicators.eta_sq.tolist())]
    Path(path).write_text("\n".join(rows) + "\n")


@dataclass
class AxiomReport:
    """Measured quotients for one (coarse, fine) pair; ``None`` when undefined."""

    stability: Optional[float]
    reduction: Optional[float]
    reliability: Optional[float]
    correction_h1: float
    n_refined: int
    stability_gap: float = 0.0      # |eta_fine - eta_coarse| on the kept elements


def measure_axioms(coarse, fine, q_red: float = Q_RED) -> AxiomReport:
    """Stability, reduction and discrete-reliability quotients.

    ``coarse`` and ``fine`` are ``(space, indicators, solution, system)``
    tuples, ``system`` supplying the fine stiffness/mass for the H1 norm.
    """
    cs, ci, cx = coarse[:3]
    fs, fi, fx, fsys = fine
    if not is_refinement_of(fs.mesh, cs.mesh):
        raise ValueError("fine mesh is not a refinement of the coarse mesh")
    d = fx - prolongate(cs, fs, cx)
    corr = float(np.sqrt(max(d @ ((fsys.stiffness + fsys.mass) @ d), 0.0)))

    kept_c = np.isin(cs.mesh.nodes, fs.mesh.nodes)
    kept_f = np.isin(fs.mesh.nodes, cs.mesh.nodes)
    # align kept elements by forest node id
    order_c = np.argsort(cs.mesh.nodes[kept_c])
    order_f = np.argsort(fs.mesh.nodes[kept_f])
    eta_c_kept = np.sqrt(ci.eta_sq[kept_c][order_c].sum())
    eta_f_kept = np.sqrt(fi.eta_sq[kept_f][order_f].sum())
    new_sq = fi.eta_sq[~kept_f].sum()
    refined_sq = ci.eta_sq[~kept_c].sum()

    def quot(num, den):
        return None if den == 0 else float(num / den)

    stab = quot(abs(eta_f_kept - eta_c_kept), corr)
    red = quot(np.sqrt(max(new_sq - q_red * refined_sq, 0.0)), corr)
    rel = quot(corr, np.sqrt(refined_sq))
    return AxiomReport(stab, red, rel, corr, int((~kept_c).sum()), float(abs(eta_f_kept - eta_c_kept)))


def estimator_reduction_check(coarse_eta: float, fine_eta: float, correction: float,
                              q_est: float, C_est: float) -> bool:
    """``fine_eta^2 <= q_est coarse_eta^2 + C_est correction^2``."""
    return fine_eta ** 2 <= q_est * coarse_eta ** 2 + C_est * correction ** 2


def calibrated_q_est(theta: float) -> float:
    return 1.0 - 0.5 * theta * (1.0 - Q_RED)


def calibrate_c_est(etas, corrections, q_est: float, safety: float = 2.0) -> float:
    """Smallest ``C_est`` making the reduction inequality hold on a pilot run, times ``safety``."""
    etas = np.asarray(etas, dtype=float)
    corr = np.asarray(corrections, dtype=float)
    need = (etas[1:] ** 2 - q_est * etas[:-1] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(corr > 0, need / corr ** 2, 0.0)
    return safety * max(float(np.max(c, initial=0.0)), 0.0)
