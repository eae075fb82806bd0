"""Lowest-order conforming finite elements on :class:`~afem.mesh.Triangulation`."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .mesh import DIRICHLET, NEUMANN, Triangulation, prolongation_values
from .quadrature import ElementQuadrature, edge_rule, element_rule

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]

NEUMANN_POINTS = 10


@dataclass(frozen=True)
class ExactSolution:
    """Analytic solution: value, gradient and optional second derivatives."""

    value: Field
    grad: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
    laplacian: Optional[Field] = None
    # True when the solution is harmonic and vanishes on the Dirichlet boundary;
    # enables the boundary form of a(u, v) used for exact energy errors.
    harmonic: bool = False
    energy_sq: Optional[float] = None


@dataclass
class ProblemSpec:
    """Second-order problem ``-div(A grad u) + b.grad u + c u = f``.

    Helmholtz is selected by ``kappa`` (``A = I, b = 0, c = -kappa**2``);
    otherwise the constant coefficients ``A, b, c`` are used.
    """

    domain: Callable[[], Triangulation]
    kappa: Optional[float] = None
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    c: Optional[float] = None
    f: Union[Field, float, str] = 0.0
    g: Union[Field, float, str, None] = None
    exact: Optional[ExactSolution] = None
    singular_points: tuple = ()
    name: str = "problem"

    def __post_init__(self):
        if self.kappa is None and self.A is None and self.c is None and self.b is None:
            raise ValueError("either kappa or general coefficients are required")
        if self.A is not None:
            A = np.asarray(self.A, dtype=float)
            if A.shape != (2, 2) or not np.allclose(A, A.T) or np.any(np.linalg.eigvalsh(A) <= 0):
                raise ValueError("A must be a symmetric positive definite 2x2 matrix")
        if self.kappa is not None and not np.isreal(self.kappa):
            raise ValueError("kappa must be real")
        if (self.f == "manufactured" or self.g == "manufactured") and self.exact is None:
            raise ValueError("manufactured data needs an exact solution")

    @property
    def is_helmholtz(self) -> bool:
        return self.kappa is not None

    def coefficients(self) -> tuple[np.ndarray, np.ndarray, float]:
        if self.is_helmholtz:
            return np.eye(2), np.zeros(2), -float(self.kappa) ** 2
        A = np.eye(2) if self.A is None else np.asarray(self.A, dtype=float)
        b = np.zeros(2) if self.b is None else np.asarray(self.b, dtype=float)
        c = 0.0 if self.c is None else float(self.c)
        return A, b, c

    def rhs(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if isinstance(self.f, str):
            if self.f != "manufactured":
                raise ValueError(f"unknown rhs {self.f!r}")
            A, b, c = self.coefficients()
            ex = self.exact
            if ex.laplacian is None or not np.allclose(A, np.eye(2) * A[0, 0]):
                raise ValueError("manufactured rhs needs a laplacian and isotropic A")
            gx, gy = ex.grad(x, y)
            return -A[0, 0] * ex.laplacian(x, y) + b[0] * gx + b[1] * gy + c * ex.value(x, y)
        if callable(self.f):
            return np.asarray(self.f(x, y), dtype=float) * np.ones_like(x)
        return float(self.f) * np.ones_like(x)

    def neumann(self, x: np.ndarray, y: np.ndarray, nx: np.ndarray, ny: np.ndarray) -> np.ndarray:
        """Neumann data; callables take ``(x, y, nx, ny)`` with the outward normal."""
        if self.g is None:
            return np.zeros_like(x)
        if isinstance(self.g, str):
            if self.g != "manufactured":
                raise ValueError(f"unknown Neumann data {self.g!r}")
            A, _, _ = self.coefficients()
            gx, gy = self.exact.grad(x, y)
            fx = A[0, 0] * gx + A[0, 1] * gy
            fy = A[1, 0] * gx + A[1, 1] * gy
            return fx * nx + fy * ny
        if callable(self.g):
            return np.asarray(self.g(x, y, nx, ny), dtype=float) * np.ones_like(x)
        return float(self.g) * np.ones_like(x)

    def scaled(self, s: float) -> "ProblemSpec":
        """Same problem with data (f, g, u) multiplied by ``s``."""
        rhs, neu = self.rhs, self.neumann
        ex = self.exact
        new_ex = None
        if ex is not None:
            new_ex = ExactSolution(
                value=lambda x, y: s * ex.value(x, y),
                grad=lambda x, y: tuple(s * g for g in ex.grad(x, y)),
                laplacian=None if ex.laplacian is None else (lambda x, y: s * ex.laplacian(x, y)),
                harmonic=ex.harmonic,
                energy_sq=None if ex.energy_sq is None else s * s * ex.energy_sq,
            )
        return ProblemSpec(
            domain=self.domain, kappa=self.kappa, A=self.A, b=self.b, c=self.c,
            f=lambda x, y: s * rhs(x, y),
            g=None if self.g is None else (lambda x, y, nx, ny: s * neu(x, y, nx, ny)),
            exact=new_ex, singular_points=self.singular_points, name=f"{self.name}*{s}",
        )


@dataclass
class DiscreteSpace:
    """P1 nodal space with homogeneous Dirichlet constraints."""

    mesh: Triangulation
    dof_map: np.ndarray          # vertex -> free dof index, or -1 if constrained
    dof_count: int
    free: np.ndarray             # free vertex ids in dof order

    def to_vertex_values(self, x: np.ndarray) -> np.ndarray:
        v = np.zeros(self.mesh.n_vertices)
        v[self.free] = x
        return v

    def from_vertex_values(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[self.free]


def build_space(mesh: Triangulation) -> DiscreteSpace:
    constrained = np.zeros(mesh.n_vertices, dtype=bool)
    dir_edges = mesh.edges[mesh.edge_label == DIRICHLET]
    constrained[dir_edges.ravel()] = True
    free = np.flatnonzero(~constrained)
    dof_map = np.full(mesh.n_vertices, -1, dtype=np.int64)
    dof_map[free] = np.arange(len(free))
    return DiscreteSpace(mesh, dof_map, len(free), free)


def prolongate(coarse: DiscreteSpace, fine: DiscreteSpace, x: np.ndarray) -> np.ndarray:
    """Coefficient vector of a coarse discrete function on the fine space."""
    v = prolongation_values(coarse.mesh, fine.mesh, coarse.to_vertex_values(x))
    return fine.from_vertex_values(v)


def hat_gradients(mesh: Triangulation) -> np.ndarray:
    """(M, 3, 2) gradients of the barycentric coordinates."""
    X = mesh.coords
    area = mesh.areas
    if np.any(area <= 0):
        raise ArithmeticError("degenerate element (area <= 0) during assembly")
    G = np.empty((mesh.n_elements, 3, 2))
    for k in range(3):
        p, q = X[:, (k + 1) % 3], X[:, (k + 2) % 3]
        G[:, k, 0] = (p[:, 1] - q[:, 1]) / (2 * area)
        G[:, k, 1] = (q[:, 0] - p[:, 0]) / (2 * area)
    return G


_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def local_matrices(mesh: Triangulation, A=None, b=None):
    """Element stiffness ``(A grad phi_j, grad phi_i)``, mass and convection."""
    A = np.eye(2) if A is None else np.asarray(A, dtype=float)
    G = hat_gradients(mesh)
    area = mesh.areas
    AG = np.einsum("ij,mkj->mki", A, G)
    K = np.einsum("mid,mjd->mij", G, AG) * area[:, None, None]
    Mloc = area[:, None, None] * _MASS_REF[None]
    C = None
    if b is not None and np.any(np.asarray(b) != 0):
        bg = np.einsum("d,mjd->mj", np.asarray(b, dtype=float), G)   # b . grad phi_j
        C = (area / 3.0)[:, None, None] * np.broadcast_to(bg[:, None, :], (mesh.n_elements, 3, 3))
    return K, Mloc, C


def _scatter(mesh: Triangulation, local: np.ndarray) -> sp.csr_matrix:
    T = mesh.triangles
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


@dataclass
class SparseSystem:
    """Linear system over the free dofs."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    stiffness: Optional[sp.csr_matrix] = None
    mass: Optional[sp.csr_matrix] = None
    extras: dict = field(default_factory=dict)

    @property
    def dof_count(self) -> int:
        return self.matrix.shape[0]


def _restrict(space: DiscreteSpace, M: sp.csr_matrix) -> sp.csr_matrix:
    f = space.free
    return M[f][:, f].tocsr()


def element_quadrature(space: DiscreteSpace, problem: ProblemSpec) -> ElementQuadrature:
    return element_rule(space.mesh.coords, problem.singular_points)


def neumann_edges(mesh: Triangulation):
    """Neumann edges as ``(edge ids, element, p0, p1, outward normal, length)``."""
    idx = np.flatnonzero(mesh.edge_label == NEUMANN)
    el = mesh.edge2el[idx, 0]
    loc = mesh.edge_local[idx, 0]
    T = mesh.triangles[el]
    i = T[np.arange(len(idx)), loc]
    j = T[np.arange(len(idx)), (loc + 1) % 3]
    p0, p1 = mesh.vertices[i], mesh.vertices[j]
    d = p1 - p0
    length = np.hypot(d[:, 0], d[:, 1])
    # counterclockwise elements: outward normal of edge (p0 -> p1) is d rotated clockwise
    normal = np.stack([d[:, 1], -d[:, 0]], axis=1) / length[:, None]
    return idx, el, i, j, p0, p1, normal, length


def neumann_load(space: DiscreteSpace, problem: ProblemSpec, n_points: int = NEUMANN_POINTS) -> np.ndarray:
    """Vertex vector ``<g, phi_i>_{Gamma_N}``."""
    mesh = space.mesh
    out = np.zeros(mesh.n_vertices)
    if problem.g is None:
        return out
    _, _, i, j, p0, p1, normal, length = neumann_edges(mesh)
    if len(i) == 0:
        return out
    t, w = edge_rule(n_points)
    X = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]
    nx = np.broadcast_to(normal[:, None, 0], X.shape[:2])
    ny = np.broadcast_to(normal[:, None, 1], X.shape[:2])
    gv = problem.neumann(X[..., 0], X[..., 1], nx, ny)
    wl = w[None, :] * length[:, None]
    np.add.at(out, i, np.sum(wl * gv * (1 - t)[None, :], axis=1))
    np.add.at(out, j, np.sum(wl * gv * t[None, :], axis=1))
    return out


def volume_load(space: DiscreteSpace, problem: ProblemSpec, quad: ElementQuadrature = None) -> np.ndarray:
    """Vertex vector ``<f, phi_i>``."""
    mesh = space.mesh
    if quad is None:
        quad = element_quadrature(space, problem)
    fv = problem.rhs(quad.points[:, 0], quad.points[:, 1])
    out = np.zeros(mesh.n_vertices)
    T = mesh.triangles[quad.elem]
    for k in range(3):
        out += np.bincount(T[:, k], weights=quad.weight * fv * quad.bary[:, k], minlength=mesh.n_vertices)
    return out


def assemble(space: DiscreteSpace, problem: ProblemSpec) -> SparseSystem:
    """Matrix ``b(phi_j, phi_i)`` and load ``<f, phi_i> + <g, phi_i>_{Gamma_N}``."""
    mesh = space.mesh
    A, b, c = problem.coefficients()
    K, Mloc, C = local_matrices(mesh, A, b)
    Kf = _scatter(mesh, K)
    Mf = _scatter(mesh, Mloc)
    B = Kf + c * Mf
    if C is not None:
        B = B + _scatter(mesh, C)
    load = volume_load(space, problem) + neumann_load(space, problem)
    return SparseSystem(
        matrix=_restrict(space, B.tocsr()),
        rhs=load[space.free],
        stiffness=_restrict(space, Kf),
        mass=_restrict(space, Mf),
    )


def h1_gram(system: SparseSystem) -> SparseSystem:
    """Gram matrix of the full H1 inner product on the same dofs."""
    return SparseSystem(matrix=(system.stiffness + system.mass).tocsr(), rhs=np.zeros(system.dof_count))


def energy_norm(space: DiscreteSpace, problem: ProblemSpec, x: np.ndarray, system: SparseSystem = None) -> float:
    """``sqrt(a(v, v))`` for the coefficient vector ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (space.dof_count,):
        raise ValueError(f"vector has shape {x.shape}, expected ({space.dof_count},)")
    if system is None:
        A, _, _ = problem.coefficients()
        K, _, _ = local_matrices(space.mesh, A)
        S = _restrict(space, _scatter(space.mesh, K))
    else:
        S = system.stiffness
    return float(np.sqrt(max(x @ (S @ x), 0.0)))


class UnsupportedOperation(RuntimeError):
    pass


def _require_exact(problem: ProblemSpec) -> ExactSolution:
    if problem.exact is None:
        raise UnsupportedOperation("operation needs an exact solution")
    return problem.exact


def error_integrals(space: DiscreteSpace, problem: ProblemSpec, x: np.ndarray) -> tuple[float, float]:
    """``(||u - U||_{L2}^2, ||grad(u - U)||_{L2}^2)`` by quadrature."""
    ex = _require_exact(problem)
    mesh = space.mesh
    quad = element_quadrature(space, problem)
    v = space.to_vertex_values(np.asarray(x, dtype=float))
    T = mesh.triangles[quad.elem]
    Uq = np.einsum("qk,qk->q", quad.bary, v[T])
    G = hat_gradients(mesh)
    gradU = np.einsum("mkd,mk->md", G, v[mesh.triangles])[quad.elem]
    px, py = quad.points[:, 0], quad.points[:, 1]
    gx, gy = ex.grad(px, py)
    l2 = np.sum(quad.weight * (ex.value(px, py) - Uq) ** 2)
    h1s = np.sum(quad.weight * ((gx - gradU[:, 0]) ** 2 + (gy - gradU[:, 1]) ** 2))
    return float(l2), float(h1s)


def h1_error(space: DiscreteSpace, problem: ProblemSpec, x: np.ndarray) -> float:
    """Full ``H^1`` norm of ``u - U``."""
    l2, h1s = error_integrals(space, problem, x)
    return float(np.sqrt(l2 + h1s))


def exact_energy_functional(space: DiscreteSpace, problem: ProblemSpec, system: SparseSystem):
    """``(|||u|||^2, a(u, phi_i))`` for the dofs of ``space``.

    For harmonic solutions vanishing on the Dirichlet boundary, Green's
    formula turns ``a(u, phi)`` into ``<du/dn, phi>_{Gamma_N}``, avoiding
    quadrature of the singular gradient.
    """
    ex = _require_exact(problem)
    A, _, _ = problem.coefficients()
    isotropic_unit = np.allclose(A, np.eye(2))
    if ex.harmonic and ex.energy_sq is not None and isotropic_unit:
        cached = system.extras.get("a_u")
        if cached is None:
            cached = _exact_flux_load(space, problem)
            system.extras["a_u"] = cached
        return ex.energy_sq, cached
    mesh = space.mesh
    quad = element_quadrature(space, problem)
    px, py = quad.points[:, 0], quad.points[:, 1]
    gx, gy = ex.grad(px, py)
    Agx = A[0, 0] * gx + A[0, 1] * gy
    Agy = A[1, 0] * gx + A[1, 1] * gy
    G = hat_gradients(mesh)[quad.elem]
    T = mesh.triangles[quad.elem]
    out = np.zeros(mesh.n_vertices)
    for k in range(3):
        out += np.bincount(T[:, k], weights=quad.weight * (Agx * G[:, k, 0] + Agy * G[:, k, 1]),
                           minlength=mesh.n_vertices)
    usq = ex.energy_sq
    if usq is None:
        usq = float(np.sum(quad.weight * (gx * Agx + gy * Agy)))
    return usq, out[space.free]


def _exact_flux_load(space: DiscreteSpace, problem: ProblemSpec) -> np.ndarray:
    ex = problem.exact
    flux = ProblemSpec(domain=problem.domain, kappa=0.0, g="manufactured", exact=ex)
    return neumann_load(space, flux)[space.free]


def energy_error_sq(space: DiscreteSpace, problem: ProblemSpec, system: SparseSystem, x: np.ndarray) -> float:
    """``|||u - U|||^2 = |||u|||^2 - 2 a(u, U) + a(U, U)``."""
    usq, au = exact_energy_functional(space, problem, system)
    x = np.asarray(x, dtype=float)
    return float(usq - 2 * au @ x + x @ (system.stiffness @ x))
