"""Benchmark problems on the Z-shaped domains."""
from __future__ import annotations

from functools import lru_cache, partial

import numpy as np
from scipy import integrate

from .fem import ExactSolution, ProblemSpec
from .mesh import Z_SYMMETRIC_T, reentrant_angle, z_domain


def singularity_exponent(variant: str) -> float:
    """``beta = pi / alpha`` for the re-entrant angle ``alpha``."""
    return np.pi / reentrant_angle(variant)


def corner_solution(beta: float) -> ExactSolution:
    """``u = r**beta cos(beta phi)``, harmonic, zero on the rays ``phi = +-pi/(2 beta)``."""

    def value(x, y):
        r = np.hypot(x, y)
        return r ** beta * np.cos(beta * np.arctan2(y, x))

    def grad(x, y):
        r = np.hypot(x, y)
        phi = np.arctan2(y, x)
        s = beta * r ** (beta - 1.0)
        return s * np.cos((beta - 1.0) * phi), -s * np.sin((beta - 1.0) * phi)

    def laplacian(x, y):
        return np.zeros_like(np.asarray(x, dtype=float))

    return ExactSolution(value, grad, laplacian, harmonic=True, energy_sq=_corner_energy(beta))


def _neumann_sides(t: float):
    # (start, end, outward normal) of the Neumann part of the symmetric-cut polygon
    return [
        ((-1.0, -t), (-1.0, -1.0), (-1.0, 0.0)),
        ((-1.0, -1.0), (1.0, -1.0), (0.0, -1.0)),
        ((1.0, -1.0), (1.0, 1.0), (1.0, 0.0)),
        ((1.0, 1.0), (-1.0, 1.0), (0.0, 1.0)),
        ((-1.0, 1.0), (-1.0, t), (-1.0, 0.0)),
    ]


@lru_cache(maxsize=None)
def _corner_energy(beta: float) -> float:
    """``int |grad u|^2 = int_{Gamma_N} u du/dn`` on the symmetric-cut domain."""
    def u(x, y):
        return np.hypot(x, y) ** beta * np.cos(beta * np.arctan2(y, x))

    def dudn(x, y, n):
        r = np.hypot(x, y)
        phi = np.arctan2(y, x)
        s = beta * r ** (beta - 1.0)
        return s * (np.cos((beta - 1) * phi) * n[0] - np.sin((beta - 1) * phi) * n[1])

    total = 0.0
    for p, q, n in _neumann_sides(Z_SYMMETRIC_T):
        p, q = np.asarray(p), np.asarray(q)
        L = float(np.hypot(*(q - p)))

        def integrand(s):
            x, y = p + s * (q - p)
            return u(x, y) * dudn(x, y, n) * L

        val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
        total += val
    return total


def z1_problem(kappa: float = 2.0) -> ProblemSpec:
    """Helmholtz with ``f = 1`` and homogeneous Dirichlet data, single cut."""
    return ProblemSpec(domain=partial(z_domain, "single_cut"), kappa=kappa, f=1.0, name=f"z1-k{kappa:g}")


def z2_problem(kappa: float = 2.0) -> ProblemSpec:
    """Mixed problem with known solution on the symmetric-cut domain.

    ``f = -kappa**2 u`` and ``g = du/dn``; Dirichlet on the two cut edges.
    """
    beta = singularity_exponent("symmetric_cut")
    ex = corner_solution(beta)
    k2 = float(kappa) ** 2
    return ProblemSpec(
        domain=partial(z_domain, "symmetric_cut"), kappa=kappa,
        f=lambda x, y: -k2 * ex.value(x, y), g="manufactured", exact=ex,
        singular_points=((0.0, 0.0),), name=f"z2-k{kappa:g}",
    )


PROBLEMS = {"z1": z1_problem, "z2": z2_problem}


def get_problem(name: str, kappa: float) -> ProblemSpec:
    try:
        return PROBLEMS[name](kappa)
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def variant_of(problem_name: str) -> str:
    return {"z1": "single_cut", "z2": "symmetric_cut"}[problem_name]
