"""Quadrature rules on triangles and edges.

All element rules are returned as flat arrays ``(elem, bary, weight)`` where
``bary`` holds barycentric coordinates with respect to the owning element, so
P1 hat functions can be evaluated directly as ``bary[:, k]`` and physical
points as ``bary @ vertices``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Degree-5 symmetric 7-point rule (Strang--Fix / Dunavant), weights sum to 1.
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_W0, _W1, _W2 = 0.225, 0.132394152788506, 0.125939180544827

DUNAVANT7_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
DUNAVANT7_WEIGHTS = np.array([_W0, _W1, _W1, _W1, _W2, _W2, _W2])


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss--Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def collapsed_gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Duffy-collapsed tensor Gauss rule on the reference triangle.

    Exact for polynomials of degree ``2n - 2``. Collapse is at barycentric
    vertex 0; weights sum to 1.
    """
    s, ws = gauss_legendre(n)
    t, wt = gauss_legendre(n)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt) * 2.0 * S
    l1 = S * (1.0 - T)
    l2 = S * T
    bary = np.stack([1.0 - l1 - l2, l1, l2], axis=-1).reshape(-1, 3)
    return bary, W.ravel()


@lru_cache(maxsize=None)
def graded_duffy(levels: int, sigma: float, ns: int, nt: int) -> tuple[np.ndarray, np.ndarray]:
    """Duffy rule with geometric grading toward barycentric vertex 0.

    Intended for integrands behaving like ``r**p`` (``p > -2``) at that
    vertex. Weights sum to 1.
    """
    s_ref, ws_ref = gauss_legendre(ns)
    t, wt = gauss_legendre(nt)
    edges = np.concatenate([sigma ** np.arange(levels + 1), [0.0]])
    s_all, ws_all = [], []
    for hi, lo in zip(edges[:-1], edges[1:]):
        s_all.append(lo + (hi - lo) * s_ref)
        ws_all.append((hi - lo) * ws_ref)
    s = np.concatenate(s_all)
    ws = np.concatenate(ws_all)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt) * 2.0 * S
    l1 = S * (1.0 - T)
    l2 = S * T
    bary = np.stack([1.0 - l1 - l2, l1, l2], axis=-1).reshape(-1, 3)
    return bary, W.ravel()


@dataclass(frozen=True)
class ElementQuadrature:
    """Flattened quadrature over a set of triangles.

    ``weight`` already includes the element area, so ``sum(weight * F(x))``
    approximates the integral of ``F`` over the union of the elements.
    """

    elem: np.ndarray    # (Q,) owning element
    bary: np.ndarray    # (Q, 3) barycentric coordinates in that element
    weight: np.ndarray  # (Q,)
    points: np.ndarray  # (Q, 2)

    def element_sum(self, values: np.ndarray, n_elements: int) -> np.ndarray:
        """Per-element integral of sampled ``values``."""
        return np.bincount(self.elem, weights=self.weight * values, minlength=n_elements)


def _tri_geometry(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d1 = coords[:, 1] - coords[:, 0]
    d2 = coords[:, 2] - coords[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    diam = np.max(np.stack([
        np.hypot(*(coords[:, 1] - coords[:, 0]).T),
        np.hypot(*(coords[:, 2] - coords[:, 1]).T),
        np.hypot(*(coords[:, 0] - coords[:, 2]).T),
    ]), axis=0)
    return area, diam


def _point_triangle_distance(p: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Euclidean distance from point ``p`` to each (closed) triangle."""
    a, b, c = coords[:, 0], coords[:, 1], coords[:, 2]

    def cross(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    s = np.sign(cross(b - a, c - a))
    inside = ((s * cross(b - a, p - a) >= 0) & (s * cross(c - b, p - b) >= 0)
              & (s * cross(a - c, p - c) >= 0))

    def seg(u, v):
        d = v - u
        t = np.clip(np.einsum("ij,ij->i", p - u, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
        q = u + t[:, None] * d
        return np.hypot(*(p - q).T)

    dist = np.minimum(np.minimum(seg(a, b), seg(b, c)), seg(c, a))
    return np.where(inside, 0.0, dist)


def standard_rule(coords: np.ndarray) -> ElementQuadrature:
    """7-point degree-5 rule on every element of ``coords`` (M, 3, 2)."""
    M = coords.shape[0]
    area, _ = _tri_geometry(coords)
    nq = len(DUNAVANT7_WEIGHTS)
    elem = np.repeat(np.arange(M), nq)
    bary = np.tile(DUNAVANT7_BARY, (M, 1))
    weight = (area[:, None] * DUNAVANT7_WEIGHTS[None, :]).ravel()
    points = np.einsum("qk,qkd->qd", bary, coords[elem])
    return ElementQuadrature(elem, bary, weight, points)


# Refinement knobs of the singular composite rule.
FAR_POINTS = 6          # collapsed n x n rule on well-separated pieces
NEAR_RATIO = 3.0        # piece is "far" once dist >= NEAR_RATIO * diam
MAX_DEPTH = 14
GRADED_LEVELS = 20
GRADED_SIGMA = 0.25
GRADED_NS = 8
GRADED_NT = 12

_SPLIT = [
    np.array([[1, 0, 0], [.5, .5, 0], [.5, 0, .5]]),
    np.array([[.5, .5, 0], [0, 1, 0], [0, .5, .5]]),
    np.array([[.5, 0, .5], [0, .5, .5], [0, 0, 1]]),
    np.array([[.5, .5, 0], [0, .5, .5], [.5, 0, .5]]),
]


def singular_rule(coords: np.ndarray, singular_points) -> ElementQuadrature:
    """High-accuracy composite rule for data singular at isolated points.

    Elements well separated from every singular point get a collapsed
    Gauss rule. Elements close to one are split recursively; pieces having a
    singular point as vertex get a geometrically graded Duffy rule.
    """
    coords = np.asarray(coords, dtype=float)
    M = coords.shape[0]
    area, diam = _tri_geometry(coords)
    far_bary, far_w = collapsed_gauss(FAR_POINTS)
    sing = [np.asarray(p, dtype=float) for p in singular_points]

    near = np.zeros(M, dtype=bool)
    for p in sing:
        near |= _point_triangle_distance(p, coords) < NEAR_RATIO * diam

    far_idx = np.flatnonzero(~near)
    elems = [np.repeat(far_idx, len(far_w))]
    barys = [np.tile(far_bary, (len(far_idx), 1))]
    weights = [(area[far_idx, None] * far_w[None, :]).ravel()]

    g_bary, g_w = graded_duffy(GRADED_LEVELS, GRADED_SIGMA, GRADED_NS, GRADED_NT)
    split = np.stack(_SPLIT)
    # breadth-first over pieces: barycentric vertex matrices V and owning element
    owner = np.flatnonzero(near)
    V = np.broadcast_to(np.eye(3), (len(owner), 3, 3)).copy()
    depth = 0
    while len(owner):
        P = np.einsum("pij,pjd->pid", V, coords[owner])
        pa = area[owner] * np.abs(np.linalg.det(V))
        pd = P[:, [1, 2, 0]] - P
        pdiam = np.max(np.hypot(pd[..., 0], pd[..., 1]), axis=1)
        hit = np.full(len(owner), -1)
        dmin = np.full(len(owner), np.inf)
        for p in sing:
            close = np.hypot(P[..., 0] - p[0], P[..., 1] - p[1]) <= 1e-14 * np.maximum(1.0, diam[owner])[:, None]
            has = close.any(axis=1)
            hit = np.where(has & (hit < 0), np.argmax(close, axis=1), hit)
            dmin = np.minimum(dmin, _point_triangle_distance(p, P))
        graded = hit >= 0
        if graded.any():
            k = hit[graded]
            order = np.stack([k, (k + 1) % 3, (k + 2) % 3], axis=1)
            Vr = np.take_along_axis(V[graded], order[:, :, None], axis=1)
            elems.append(np.repeat(owner[graded], len(g_w)))
            barys.append(np.einsum("qi,pij->pqj", g_bary, Vr).reshape(-1, 3))
            weights.append((pa[graded, None] * g_w[None, :]).ravel())
        done = ~graded & ((dmin >= NEAR_RATIO * pdiam) | (depth >= MAX_DEPTH))
        if done.any():
            elems.append(np.repeat(owner[done], len(far_w)))
            barys.append(np.einsum("qi,pij->pqj", far_bary, V[done]).reshape(-1, 3))
            weights.append((pa[done, None] * far_w[None, :]).ravel())
        go = ~graded & ~done
        owner = np.repeat(owner[go], 4)
        V = np.einsum("sij,pjk->psik", split, V[go]).reshape(-1, 3, 3)
        depth += 1

    elem = np.concatenate(elems)
    bary = np.concatenate(barys)
    weight = np.concatenate(weights)
    order = np.argsort(elem, kind="stable")
    elem, bary, weight = elem[order], bary[order], weight[order]
    points = np.einsum("qk,qkd->qd", bary, coords[elem])
    return ElementQuadrature(elem, bary, weight, points)


def element_rule(coords: np.ndarray, singular_points=()) -> ElementQuadrature:
    if len(singular_points) == 0:
        return standard_rule(coords)
    return singular_rule(coords, singular_points)


def edge_rule(n: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule on [0, 1] for edge integrals (3 points: degree 5)."""
    return gauss_legendre(n)
