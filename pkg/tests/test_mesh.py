import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afem.mesh import (DIRICHLET, NEUMANN, cardinality_bounds_check, mesh_size, overlay, polygon_area,
                       prolongation_matrix, prolongation_values, read_mesh, reentrant_angle, refine, signed_areas,
                       son_counts, uniform_refine, write_mesh, z_domain, is_refinement_of)
from afem.problems import singularity_exponent

from conftest import random_refinements, square


def boundary_length(mesh, label):
    E = np.array([(i, j) for i, j, lab in mesh.boundary_edges if lab == label], dtype=np.int64).reshape(-1, 2)
    d = mesh.vertices[E[:, 1]] - mesh.vertices[E[:, 0]]
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def check_refinement_pair(coarse, fine, marked):
    assert fine.is_conforming()
    assert np.all(fine.areas > 0)
    assert np.isclose(fine.areas.sum(), coarse.areas.sum(), rtol=1e-14, atol=0)
    # marked elements are gone
    assert not np.isin(coarse.nodes[marked], fine.nodes).any()
    sons = son_counts(coarse, fine)
    assert sons.min(initial=2) >= 2 and sons.max(initial=4) <= 4
    f = fine.forest
    root_area = signed_areas(f.xy, f.tri[f.root[fine.nodes]])
    np.testing.assert_allclose(fine.areas, root_area * 2.0 ** -fine.generation, rtol=1e-12)
    assert cardinality_bounds_check(coarse.n_elements, fine.n_elements)
    for lab in (DIRICHLET, NEUMANN):
        assert np.isclose(boundary_length(fine, lab), boundary_length(coarse, lab), rtol=1e-13, atol=1e-15)


# -- hand-executed examples --------------------------------------------------

def test_square_setup(unit_square):
    m = unit_square
    assert m.n_elements == 2
    diag = {0, 2}
    for t in m.triangles:
        assert {int(t[0]), int(t[1])} == diag
    assert m.is_conforming()


def test_empty_marking_returns_same_mesh(unit_square):
    fine = refine(unit_square, [])
    assert fine.same_as(unit_square)


def test_mark_both_halves_area(unit_square):
    fine = refine(unit_square, [0, 1])
    assert fine.n_elements == 4
    np.testing.assert_allclose(fine.areas, 0.25, rtol=0, atol=1e-16)
    check_refinement_pair(unit_square, fine, [0, 1])


def test_mark_one_forces_neighbour(unit_square):
    fine = refine(unit_square, [0])
    assert fine.n_elements == 4
    assert fine.is_conforming()


def test_uniform_twice(unit_square):
    a = uniform_refine(unit_square)
    b = uniform_refine(a)
    assert a.n_elements == 4
    assert b.n_elements == 8
    assert np.all(b.generation == 2)
    assert np.all(np.bincount(b.forest.root[b.nodes]) == 4)
    np.testing.assert_allclose(b.areas, 0.125, rtol=0, atol=1e-16)


def test_refine_rejects_unknown_element(unit_square):
    with pytest.raises(ValueError):
        refine(unit_square, [5])


def test_mesh_size_examples(unit_square):
    h, hmax = mesh_size(unit_square)
    np.testing.assert_allclose(h, np.sqrt(0.5))
    assert hmax == pytest.approx(np.sqrt(0.5))
    fine = refine(unit_square, [0, 1])
    assert mesh_size(fine)[1] == pytest.approx(np.sqrt(0.5) / np.sqrt(2), rel=1e-15)


def test_cardinality_examples():
    assert cardinality_bounds_check(4, 10)
    for n in (1, 7, 100):
        assert cardinality_bounds_check(n, n)
    assert not cardinality_bounds_check(2, 1)


# -- overlay -----------------------------------------------------------------

def test_overlay_idempotent(unit_square):
    a = refine(unit_square, [0])
    o = overlay(a, a, unit_square)
    assert o.same_as(a)


def test_overlay_of_uniform_and_root(unit_square):
    u = uniform_refine(unit_square)
    assert overlay(u, unit_square, unit_square).same_as(u)


def test_overlay_left_right(unit_square):
    base = uniform_refine(unit_square)
    c = base.areas.size
    cx = base.coords.mean(axis=1)[:, 0]
    a = refine(base, np.flatnonzero(cx < 0.5))
    b = refine(base, np.flatnonzero(cx >= 0.5))
    o = overlay(a, b, base)
    assert o.is_conforming()
    assert is_refinement_of(o, a) and is_refinement_of(o, b)
    assert o.n_elements <= a.n_elements + b.n_elements - c


def test_overlay_rejects_foreign_meshes(unit_square):
    with pytest.raises(ValueError):
        overlay(unit_square, square(), unit_square)


@settings(max_examples=200)
@given(seed=st.integers(0, 2 ** 32 - 1), steps_a=st.integers(1, 4), steps_b=st.integers(1, 4),
       variant=st.sampled_from(["single_cut", "symmetric_cut"]))
def test_overlay_bound_random(seed, steps_a, steps_b, variant):
    rng = np.random.default_rng(seed)
    root = z_domain(variant)
    base = random_refinements(root, rng, 1)[-1]
    a = random_refinements(base, rng, steps_a)[-1]
    b = random_refinements(base, rng, steps_b)[-1]
    o = overlay(a, b, base)
    assert o.is_conforming()
    assert is_refinement_of(o, a) and is_refinement_of(o, b)
    assert o.n_elements <= a.n_elements + b.n_elements - base.n_elements
    assert cardinality_bounds_check(base.n_elements, a.n_elements)
    assert cardinality_bounds_check(base.n_elements, o.n_elements)


# -- randomized refinement invariants ----------------------------------------

@settings(max_examples=60)
@given(seed=st.integers(0, 2 ** 32 - 1), variant=st.sampled_from(["single_cut", "symmetric_cut"]))
def test_refine_invariants_random(seed, variant):
    rng = np.random.default_rng(seed)
    m = z_domain(variant)
    for _ in range(5):
        k = int(rng.integers(1, m.n_elements + 1))
        marked = rng.choice(m.n_elements, size=k, replace=False)
        fine = refine(m, marked)
        check_refinement_pair(m, fine, marked)
        m = fine
    assert m.forest.max_area_defect <= 8.0


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_prolongation_reproduces_linear_functions(seed):
    rng = np.random.default_rng(seed)
    meshes = random_refinements(z_domain("symmetric_cut"), rng, 3)
    c, f = meshes[0], meshes[-1]
    a, b, d = rng.normal(size=3)
    lin = lambda V: a + b * V[:, 0] + d * V[:, 1]
    np.testing.assert_allclose(prolongation_values(c, f, lin(c.vertices)), lin(f.vertices), atol=1e-13)
    P = prolongation_matrix(c, f)
    np.testing.assert_allclose(P @ lin(c.vertices), lin(f.vertices), atol=1e-13)
    v = rng.normal(size=c.n_vertices)
    np.testing.assert_allclose(P @ v, prolongation_values(c, f, v), atol=1e-14)


# -- benchmark domains and file format ----------------------------------------

def test_z_domain_angles():
    assert singularity_exponent("single_cut") == pytest.approx(0.5398, abs=5e-5)
    assert singularity_exponent("symmetric_cut") == pytest.approx(0.5423, abs=5e-5)
    assert reentrant_angle("single_cut") == pytest.approx(2 * np.pi - np.arctan(0.5))
    assert reentrant_angle("symmetric_cut") == pytest.approx(2 * np.pi - 2 * np.arctan(0.25))


def test_z_domain_area(zmesh):
    V = zmesh.vertices
    # the fan around the origin: boundary polygon is vertices 0..n-1 in order
    assert zmesh.areas.sum() == pytest.approx(polygon_area(V), rel=1e-15)
    assert zmesh.is_conforming()
    assert np.all(zmesh.areas > 0)


def test_z_domain_labels():
    z1 = z_domain("single_cut")
    assert all(lab == DIRICHLET for *_, lab in z1.boundary_edges)
    z2 = z_domain("symmetric_cut")
    dir_edges = [(i, j) for i, j, lab in z2.boundary_edges if lab == DIRICHLET]
    assert len(dir_edges) == 2
    assert all(0 in e for e in dir_edges)
    assert boundary_length(z2, DIRICHLET) == pytest.approx(2 * np.hypot(1, 0.25))


def test_mesh_file_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    m = random_refinements(z_domain("symmetric_cut"), rng, 3)[-1]
    p = tmp_path / "m.txt"
    write_mesh(m, p)
    r = read_mesh(p)
    np.testing.assert_array_equal(r.vertices, m.vertices)
    np.testing.assert_array_equal(r.triangles, m.triangles)
    assert sorted(r.boundary_edges) == sorted(m.boundary_edges)
    # refinement edges survive: refining both gives the same geometry
    a, b = uniform_refine(m), uniform_refine(r)
    np.testing.assert_allclose(np.sort(a.areas), np.sort(b.areas), rtol=1e-15)


def test_read_mesh_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("hello\n")
    with pytest.raises(ValueError):
        read_mesh(p)
