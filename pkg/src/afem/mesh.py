"""Conforming triangulations with newest-vertex bisection.

Every mesh derived from one initial triangulation shares a single
:class:`Forest` of bisected triangles. Bisecting a forest node is
idempotent (the children are created once and reused), and edge midpoints
are deduplicated globally, so meshes of the same forest can be compared
element-by-element and overlaid by a union of refinement trees.

Local vertex order of every triangle ``(v0, v1, v2)`` is counterclockwise,
with ``(v0, v1)`` the refinement edge and ``v2`` the newest vertex. Local
edge ``k`` joins ``v_k`` and ``v_{k+1}``.
"""
from __future__ import annotations

from functools import cached_property
from pathlib import Path

import numpy as np

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2
LABEL_CHARS = {DIRICHLET: "D", NEUMANN: "N"}
CHAR_LABELS = {"D": DIRICHLET, "N": NEUMANN}


class _Grow:
    """Append-only numpy buffer with amortised doubling."""

    def __init__(self, init: np.ndarray):
        init = np.asarray(init)
        self.n = len(init)
        cap = max(16, 2 * self.n)
        self.buf = np.empty((cap,) + init.shape[1:], dtype=init.dtype)
        self.buf[: self.n] = init

    def extend(self, rows: np.ndarray) -> np.ndarray:
        k = len(rows)
        if self.n + k > len(self.buf):
            cap = max(2 * len(self.buf), self.n + k)
            new = np.empty((cap,) + self.buf.shape[1:], dtype=self.buf.dtype)
            new[: self.n] = self.buf[: self.n]
            self.buf = new
        self.buf[self.n: self.n + k] = rows
        ids = np.arange(self.n, self.n + k)
        self.n += k
        return ids

    @property
    def a(self) -> np.ndarray:
        return self.buf[: self.n]


class Forest:
    """Binary refinement forest rooted at the elements of an initial mesh."""

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray, labels: np.ndarray):
        nt = len(triangles)
        self._xy = _Grow(np.asarray(vertices, dtype=float))
        self._vparent = _Grow(np.full((len(vertices), 2), -1, dtype=np.int64))
        self._tri = _Grow(np.asarray(triangles, dtype=np.int64))
        self._lab = _Grow(np.asarray(labels, dtype=np.int8))
        self._parent = _Grow(np.full(nt, -1, dtype=np.int64))
        self._gen = _Grow(np.zeros(nt, dtype=np.int64))
        self._root = _Grow(np.arange(nt, dtype=np.int64))
        self._children = _Grow(np.full((nt, 2), -1, dtype=np.int64))
        self._midpoint: dict[tuple[int, int], int] = {}
        self.n_roots = nt
        # Largest observed |child area - parent area / 2|, relative to the
        # round-off bound eps * coordinate_scale * parent_diameter.
        self.max_area_defect = 0.0
        self._scale = float(np.max(np.abs(vertices))) if len(vertices) else 1.0

    @property
    def xy(self) -> np.ndarray:
        return self._xy.a

    @property
    def vparent(self) -> np.ndarray:
        return self._vparent.a

    @property
    def tri(self) -> np.ndarray:
        return self._tri.a

    @property
    def lab(self) -> np.ndarray:
        return self._lab.a

    @property
    def parent(self) -> np.ndarray:
        return self._parent.a

    @property
    def gen(self) -> np.ndarray:
        return self._gen.a

    @property
    def root(self) -> np.ndarray:
        return self._root.a

    @property
    def children(self) -> np.ndarray:
        return self._children.a

    @property
    def n_nodes(self) -> int:
        return self._tri.n

    def _midpoints(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        out = np.empty(len(a), dtype=np.int64)
        new_pairs = []
        for i, key in enumerate(zip(lo.tolist(), hi.tolist())):
            v = self._midpoint.get(key)
            if v is None:
                v = self._xy.n + len(new_pairs)
                self._midpoint[key] = v
                new_pairs.append(key)
            out[i] = v
        if new_pairs:
            pairs = np.array(new_pairs, dtype=np.int64)
            xy = self._xy.a
            self._xy.extend(0.5 * (xy[pairs[:, 0]] + xy[pairs[:, 1]]))
            self._vparent.extend(pairs)
        return out

    def bisect(self, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bisect ``nodes`` across their refinement edge; return children."""
        nodes = np.asarray(nodes, dtype=np.int64)
        fresh = nodes[self.children[nodes, 0] < 0]
        if len(fresh):
            fresh = np.unique(fresh)
            t = self.tri[fresh]
            L = self.lab[fresh].astype(np.int8)
            m = self._midpoints(t[:, 0], t[:, 1])
            a, b, c = t[:, 0], t[:, 1], t[:, 2]
            c1 = np.stack([c, a, m], axis=1)
            c2 = np.stack([b, c, m], axis=1)
            zero = np.zeros(len(fresh), dtype=np.int8)
            l1 = np.stack([L[:, 2], L[:, 0], zero], axis=1)
            l2 = np.stack([L[:, 1], zero, L[:, 0]], axis=1)
            k = len(fresh)
            tris = np.empty((2 * k, 3), dtype=np.int64)
            tris[0::2], tris[1::2] = c1, c2
            labs = np.empty((2 * k, 3), dtype=np.int8)
            labs[0::2], labs[1::2] = l1, l2
            ids = self._tri.extend(tris)
            self._lab.extend(labs)
            self._parent.extend(np.repeat(fresh, 2))
            self._gen.extend(np.repeat(self.gen[fresh] + 1, 2))
            self._root.extend(np.repeat(self.root[fresh], 2))
            self._children.extend(np.full((2 * k, 2), -1, dtype=np.int64))
            self.children[fresh] = ids.reshape(k, 2)
            self._check_halving(fresh)
        ch = self.children[nodes]
        return ch[:, 0], ch[:, 1]

    def _check_halving(self, parents: np.ndarray) -> None:
        pa = signed_areas(self.xy, self.tri[parents])
        ch = self.children[parents]
        a1 = signed_areas(self.xy, self.tri[ch[:, 0]])
        a2 = signed_areas(self.xy, self.tri[ch[:, 1]])
        if np.any(a1 <= 0) or np.any(a2 <= 0):
            raise RuntimeError("bisection produced a non-positive area")
        xy = self.xy
        t = self.tri[parents]
        diam = np.max(np.stack([np.hypot(*(xy[t[:, i]] - xy[t[:, (i + 1) % 3]]).T) for i in range(3)]),
                      axis=0)
        bound = np.finfo(float).eps * self._scale * diam
        defect = np.maximum(np.abs(a1 - 0.5 * pa), np.abs(a2 - 0.5 * pa)) / bound
        self.max_area_defect = max(self.max_area_defect, float(defect.max()))


def signed_areas(xy: np.ndarray, tri: np.ndarray) -> np.ndarray:
    p0, p1, p2 = xy[tri[:, 0]], xy[tri[:, 1]], xy[tri[:, 2]]
    d1, d2 = p1 - p0, p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


class Triangulation:
    """A conforming mesh: a set of leaves of a :class:`Forest`.

    Vertices are compacted to ``0..n_vertices-1`` in increasing order of the
    forest's global vertex ids, so refinement appends new vertices after the
    old ones.
    """

    def __init__(self, forest: Forest, nodes: np.ndarray):
        self.forest = forest
        self.nodes = np.asarray(nodes, dtype=np.int64)
        gtri = forest.tri[self.nodes]
        self.vertex_gid, inv = np.unique(gtri, return_inverse=True)
        self.triangles = inv.reshape(-1, 3)
        self.vertices = forest.xy[self.vertex_gid]
        self.edge_labels = forest.lab[self.nodes]

    @classmethod
    def from_arrays(cls, vertices, triangles, boundary=None, assign_refinement_edges=True):
        """Build an initial mesh.

        ``boundary`` is an iterable of ``(i, j, label)``; boundary edges not
        listed raise ``ValueError``. With ``boundary=None`` the whole boundary
        is Dirichlet. If ``assign_refinement_edges`` each triangle's longest
        edge becomes its refinement edge (ties: lowest sorted vertex pair);
        otherwise the given local order is kept.
        """
        V = np.asarray(vertices, dtype=float)
        T = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        area = signed_areas(V, T)
        if np.any(area == 0):
            raise ValueError("degenerate triangle in input")
        cw = area < 0
        T[cw] = T[cw][:, [1, 0, 2]]
        if assign_refinement_edges:
            T = _longest_edge_first(V, T)

        sorted_edges = np.sort(np.stack([T, np.roll(T, -1, axis=1)], axis=-1), axis=-1).reshape(-1, 2)
        uniq, inv, counts = np.unique(sorted_edges, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        if np.any(counts > 2):
            raise ValueError("non-manifold edge in input")
        on_boundary = counts[inv] == 1
        lab = np.zeros(len(sorted_edges), dtype=np.int8)
        if boundary is None:
            lab[on_boundary] = DIRICHLET
        else:
            table = {}
            for i, j, label in boundary:
                if isinstance(label, str):
                    label = CHAR_LABELS[label]
                table[(min(i, j), max(i, j))] = int(label)
            for k in np.flatnonzero(on_boundary):
                key = (int(sorted_edges[k, 0]), int(sorted_edges[k, 1]))
                if key not in table:
                    raise ValueError(f"boundary edge {key} carries no label")
                lab[k] = table[key]
        forest = Forest(V, T, lab.reshape(-1, 3))
        return cls(forest, np.arange(len(T)))

    # -- basic sizes ----------------------------------------------------
    @property
    def n_elements(self) -> int:
        return len(self.nodes)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def __len__(self) -> int:
        return self.n_elements

    @cached_property
    def coords(self) -> np.ndarray:
        """(M, 3, 2) vertex coordinates per element."""
        return self.vertices[self.triangles]

    @cached_property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def lineage(self) -> np.ndarray:
        """Forest parent node of each element (-1 for initial elements)."""
        return self.forest.parent[self.nodes]

    @property
    def generation(self) -> np.ndarray:
        return self.forest.gen[self.nodes]

    # -- edge structure -------------------------------------------------
    @cached_property
    def _edge_data(self):
        T = self.triangles
        pairs = np.stack([T, np.roll(T, -1, axis=1)], axis=-1)  # (M,3,2), edge k=(v_k, v_k+1)
        key = np.sort(pairs, axis=-1).reshape(-1, 2)
        edges, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        el2edge = inv.reshape(-1, 3)
        E = len(edges)
        edge2el = np.full((E, 2), -1, dtype=np.int64)
        edge_local = np.full((E, 2), -1, dtype=np.int64)
        elem = np.repeat(np.arange(len(T)), 3)
        local = np.tile(np.arange(3), len(T))
        order = np.argsort(inv, kind="stable")
        inv_s, elem_s, loc_s = inv[order], elem[order], local[order]
        first = np.ones(len(inv_s), dtype=bool)
        first[1:] = inv_s[1:] != inv_s[:-1]
        edge2el[inv_s[first], 0] = elem_s[first]
        edge_local[inv_s[first], 0] = loc_s[first]
        second = ~first
        if np.any(np.bincount(inv_s) > 2):
            raise ValueError("non-conforming mesh: edge shared by more than two elements")
        edge2el[inv_s[second], 1] = elem_s[second]
        edge_local[inv_s[second], 1] = loc_s[second]
        return edges, el2edge, edge2el, edge_local

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data[0]

    @property
    def el2edge(self) -> np.ndarray:
        return self._edge_data[1]

    @property
    def edge2el(self) -> np.ndarray:
        return self._edge_data[2]

    @property
    def edge_local(self) -> np.ndarray:
        return self._edge_data[3]

    @cached_property
    def edge_label(self) -> np.ndarray:
        """Per-edge label; interior edges are ``INTERIOR``."""
        e2e, loc = self.edge2el[:, 0], self.edge_local[:, 0]
        return self.edge_labels[e2e, loc]

    @property
    def boundary_edges(self) -> list[tuple[int, int, int]]:
        idx = np.flatnonzero(self.edge_label != INTERIOR)
        return [(int(self.edges[k, 0]), int(self.edges[k, 1]), int(self.edge_label[k])) for k in idx]

    def is_conforming(self) -> bool:
        """Every edge is shared by two elements or is a labelled boundary edge.

        A hanging node shows up as a boundary-like edge carrying the
        ``INTERIOR`` label, or as a mismatch of labels across a shared edge.
        """
        try:
            e2 = self.edge2el
        except ValueError:
            return False
        single = e2[:, 1] < 0
        if np.any(self.edge_label[single] == INTERIOR):
            return False
        if np.any(self.edge_label[~single] != INTERIOR):
            return False
        return bool(np.all(self.areas > 0))

    def same_as(self, other: "Triangulation") -> bool:
        return self.forest is other.forest and np.array_equal(np.sort(self.nodes), np.sort(other.nodes))


def _longest_edge_first(V: np.ndarray, T: np.ndarray) -> np.ndarray:
    out = T.copy()
    for e, t in enumerate(T):
        best = None
        for k in range(3):
            i, j = int(t[k]), int(t[(k + 1) % 3])
            length = float(np.hypot(*(V[i] - V[j])))
            key = (-round(length, 12), min(i, j), max(i, j))
            if best is None or key < best[0]:
                best = (key, k)
        k = best[1]
        out[e] = [t[k], t[(k + 1) % 3], t[(k + 2) % 3]]
    return out


# -- refinement ---------------------------------------------------------------

def _closure(mesh: Triangulation, marked: np.ndarray) -> np.ndarray:
    el2edge = mesh.el2edge
    edge_marked = np.zeros(len(mesh.edges), dtype=bool)
    edge_marked[el2edge[marked, 0]] = True
    while True:
        touched = edge_marked[el2edge].any(axis=1)
        need = touched & ~edge_marked[el2edge[:, 0]]
        if not need.any():
            return edge_marked
        edge_marked[el2edge[need, 0]] = True


def refine(mesh: Triangulation, marked) -> Triangulation:
    """Coarsest conforming NVB refinement bisecting every marked element.

    Marked refinement edges are closed under "an element with any marked edge
    has its refinement edge marked"; then every element with a marked
    refinement edge is split into 2, 3 or 4 children in one pass.
    """
    marked = np.unique(np.asarray(marked, dtype=np.int64).ravel())
    if len(marked) and (marked[0] < 0 or marked[-1] >= mesh.n_elements):
        raise ValueError("marked element not in mesh")
    if len(marked) == 0:
        return Triangulation(mesh.forest, mesh.nodes.copy())
    edge_marked = _closure(mesh, marked)
    em = edge_marked[mesh.el2edge]
    ref = em[:, 0]
    keep = mesh.nodes[~ref]
    nodes = mesh.nodes[ref]
    f = mesh.forest
    c1, c2 = f.bisect(nodes)
    e1 = em[ref, 1]   # edge (b, c) -> refinement edge of c2
    e2 = em[ref, 2]   # edge (c, a) -> refinement edge of c1
    g11, g12 = f.bisect(c1[e2]) if e2.any() else (np.empty(0, np.int64),) * 2
    g21, g22 = f.bisect(c2[e1]) if e1.any() else (np.empty(0, np.int64),) * 2
    # child slots in refined-element order, 4 slots each, -1 for unused
    slots = np.full((len(nodes), 4), -1, dtype=np.int64)
    slots[:, 0] = c1
    slots[:, 2] = c2
    slots[e2, 0], slots[e2, 1] = g11, g12
    slots[e1, 2], slots[e1, 3] = g21, g22
    sons = slots[slots >= 0]
    return Triangulation(f, np.concatenate([keep, sons]))


def son_counts(coarse: Triangulation, fine: Triangulation) -> np.ndarray:
    """Number of fine descendants of every refined coarse element."""
    if coarse.forest is not fine.forest:
        raise ValueError("meshes belong to different forests")
    f = fine.forest
    owner = np.full(f.n_nodes, -1, dtype=np.int64)
    owner[coarse.nodes] = np.arange(coarse.n_elements)
    cur = fine.nodes.copy()
    res = owner[cur]
    while np.any(res < 0):
        miss = res < 0
        cur[miss] = f.parent[cur[miss]]
        if np.any(cur[miss] < 0):
            raise ValueError("fine mesh is not a refinement of coarse mesh")
        res[miss] = owner[cur[miss]]
    counts = np.bincount(res, minlength=coarse.n_elements)
    refined = ~np.isin(coarse.nodes, fine.nodes)
    return counts[refined]


def uniform_refine(mesh: Triangulation) -> Triangulation:
    return refine(mesh, np.arange(mesh.n_elements))


def _tree_mask(mesh: Triangulation) -> np.ndarray:
    f = mesh.forest
    mask = np.zeros(f.n_nodes, dtype=bool)
    cur = mesh.nodes
    mask[cur] = True
    while len(cur):
        cur = f.parent[cur]
        cur = cur[cur >= 0]
        cur = np.unique(cur[~mask[cur]])
        mask[cur] = True
    return mask


def is_refinement_of(fine: Triangulation, coarse: Triangulation) -> bool:
    if fine.forest is not coarse.forest:
        return False
    return bool(np.all(_tree_mask(fine)[coarse.nodes]))


def overlay(a: Triangulation, b: Triangulation, common_ancestor: Triangulation) -> Triangulation:
    """Coarsest common refinement of ``a`` and ``b`` (union of their trees)."""
    if not (a.forest is b.forest is common_ancestor.forest):
        raise ValueError("meshes stem from different initial meshes")
    ma, mb = _tree_mask(a), _tree_mask(b)
    if not (np.all(ma[common_ancestor.nodes]) and np.all(mb[common_ancestor.nodes])):
        raise ValueError("common_ancestor is not refined by both meshes")
    union = ma | mb
    ch = a.forest.children
    idx = np.flatnonzero(union)
    first_child = ch[idx, 0]
    leaf = (first_child < 0) | ~union[np.maximum(first_child, 0)]
    return Triangulation(a.forest, idx[leaf])


def mesh_size(mesh: Triangulation) -> tuple[np.ndarray, float]:
    """Local mesh size ``h_T = |T|**(1/2)`` and its maximum."""
    h = np.sqrt(mesh.areas)
    return h, float(h.max())


def cardinality_bounds_check(coarse_count: int, fine_count: int) -> bool:
    """Check ``#fine - #coarse + 1 <= #fine <= #coarse * (#fine - #coarse + 1)``."""
    d = fine_count - coarse_count + 1
    return d <= fine_count <= coarse_count * d


def prolongation_values(coarse: Triangulation, fine: Triangulation, values: np.ndarray) -> np.ndarray:
    """Interpolate nodal values of a coarse P1 function to the fine mesh.

    Exact for fine meshes in ``refine(coarse)``: each new vertex is the
    midpoint of an edge along which the coarse function is affine.
    """
    if coarse.forest is not fine.forest:
        raise ValueError("meshes belong to different forests")
    f = coarse.forest
    gval = np.full(f.xy.shape[0], np.nan)
    gval[coarse.vertex_gid] = values
    todo = np.setdiff1d(fine.vertex_gid, coarse.vertex_gid)
    vp = f.vparent
    while len(todo):
        par = vp[todo]
        ready = ~np.isnan(gval[par[:, 0]]) & ~np.isnan(gval[par[:, 1]])
        if not ready.any():
            # parents not yet on either mesh: recurse through them
            extra = np.setdiff1d(par[~ready].ravel(), todo)
            extra = extra[np.isnan(gval[extra])]
            if not len(extra) or np.any(vp[extra, 0] < 0):
                raise ValueError("fine mesh is not a refinement of coarse mesh")
            todo = np.union1d(todo, extra)
            continue
        t = todo[ready]
        gval[t] = 0.5 * (gval[vp[t, 0]] + gval[vp[t, 1]])
        todo = todo[~ready]
    return gval[fine.vertex_gid]


# -- geometry of the benchmark domains ---------------------------------------

Z_SINGLE_T = 0.5
Z_SYMMETRIC_T = 0.25


def z_domain(variant: str = "single_cut") -> Triangulation:
    """Coarse mesh of the square ``(-1, 1)^2`` with a wedge cut at the origin.

    ``single_cut`` removes ``conv{(0,0), (-1,0), (-1,-0.5)}`` (all Dirichlet);
    ``symmetric_cut`` removes ``conv{(0,0), (-1,0.25), (-1,-0.25)}`` with the
    two cut edges Dirichlet and the rest of the boundary Neumann.
    """
    if variant in ("single_cut", "z1"):
        t = Z_SINGLE_T
        poly = [(0.0, 0.0), (-1.0, -t), (-1.0, -1.0), (0.0, -1.0), (1.0, -1.0),
                (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)]
        dirichlet_edges = None
    elif variant in ("symmetric_cut", "z2"):
        t = Z_SYMMETRIC_T
        poly = [(0.0, 0.0), (-1.0, -t), (-1.0, -1.0), (0.0, -1.0), (1.0, -1.0),
                (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (-1.0, 1.0), (-1.0, t)]
        n = len(poly)
        dirichlet_edges = {(0, 1), (0, n - 1)}
    else:
        raise ValueError(f"unknown Z-domain variant {variant!r}")
    n = len(poly)
    tris = [(0, k, k + 1) for k in range(1, n - 1)]
    boundary = []
    for k in range(n):
        i, j = k, (k + 1) % n
        key = (min(i, j), max(i, j))
        if dirichlet_edges is None or key in dirichlet_edges:
            boundary.append((i, j, DIRICHLET))
        else:
            boundary.append((i, j, NEUMANN))
    return Triangulation.from_arrays(poly, tris, boundary)


def reentrant_angle(variant: str) -> float:
    """Interior angle at the re-entrant corner (0, 0)."""
    if variant in ("single_cut", "z1"):
        return 2 * np.pi - np.arcsin(Z_SINGLE_T / np.sqrt(1 + Z_SINGLE_T ** 2))
    if variant in ("symmetric_cut", "z2"):
        return 2 * np.pi - 2 * np.arctan(Z_SYMMETRIC_T)
    raise ValueError(f"unknown Z-domain variant {variant!r}")


def polygon_area(points) -> float:
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


# -- text format ---------------------------------------------------------------

MESH_HEADER = "afem-mesh v1"


def write_mesh(mesh: Triangulation, path) -> None:
    lines = [MESH_HEADER, f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_elements}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    bnd = mesh.boundary_edges
    lines.append(f"boundary {len(bnd)}")
    lines += [f"{i} {j} {LABEL_CHARS[lab]}" for i, j, lab in bnd]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Triangulation:
    """Read a mesh file; the result is the root of a new forest."""
    tokens = Path(path).read_text().split("\n")
    lines = [ln.strip() for ln in tokens if ln.strip()]
    if not lines or lines[0] != MESH_HEADER:
        raise ValueError("not an afem-mesh v1 file")
    pos = 1

    def section(name):
        nonlocal pos
        head = lines[pos].split()
        if head[0] != name:
            raise ValueError(f"expected section {name!r}, got {head[0]!r}")
        count = int(head[1])
        rows = [ln.split() for ln in lines[pos + 1: pos + 1 + count]]
        pos += 1 + count
        return rows

    verts = [(float(a), float(b)) for a, b in section("vertices")]
    tris = [(int(a), int(b), int(c)) for a, b, c in section("triangles")]
    bnd = [(int(a), int(b), lab) for a, b, lab in section("boundary")]
    return Triangulation.from_arrays(verts, tris, bnd, assign_refinement_edges=False)


def prolongation_matrix(coarse: Triangulation, fine: Triangulation):
    """Sparse (fine vertices x coarse vertices) interpolation matrix."""
    import scipy.sparse as sp

    if coarse.forest is not fine.forest:
        raise ValueError("meshes belong to different forests")
    f = coarse.forest
    n_glob = f.xy.shape[0]
    nc = coarse.n_vertices
    vp = f.vparent
    level = np.full(n_glob, -1, dtype=np.int64)
    level[coarse.vertex_gid] = 0
    # collect every vertex needed to express the fine vertices
    need = np.setdiff1d(fine.vertex_gid, coarse.vertex_gid)
    pending = need
    while len(pending):
        par = np.unique(vp[pending].ravel())
        if np.any(par < 0):
            raise ValueError("fine mesh is not a refinement of coarse mesh")
        par = par[(level[par] < 0) & ~np.isin(par, need)]
        need = np.union1d(need, par)
        pending = par
    while np.any(level[need] < 0):
        todo = need[level[need] < 0]
        lp = level[vp[todo]]
        ready = np.all(lp >= 0, axis=1)
        level[todo[ready]] = lp[ready].max(axis=1) + 1
    rows = [coarse.vertex_gid]
    cols = [np.arange(nc)]
    vals = [np.ones(nc)]
    P = sp.csr_matrix((vals[0], (rows[0], cols[0])), shape=(n_glob, nc))
    for L in range(1, int(level[need].max(initial=0)) + 1):
        t = need[level[need] == L]
        block = 0.5 * (P[vp[t, 0]] + P[vp[t, 1]])
        B = block.tocoo()
        rows.append(t[B.row])
        cols.append(B.col)
        vals.append(B.data)
        P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n_glob, nc))
    return P[fine.vertex_gid]
