import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afem.estimator import (AxiomReport, Q_RED, calibrate_c_est, calibrated_q_est, dump_indicators,
                            estimate, estimator_reduction_check, measure_axioms, oscillation)
from afem.fem import ExactSolution, ProblemSpec, assemble, build_space, h1_error, prolongate
from afem.mesh import DIRICHLET, NEUMANN, Triangulation, refine, uniform_refine
from afem.problems import z1_problem, z2_problem
from afem.solver import solve

from conftest import SQUARE_T, SQUARE_V, random_refinements


def solved(problem, mesh):
    s = build_space(mesh)
    S = assemble(s, problem)
    return s, S, solve(S).solution


def one_triangle(V=((0.0, 0.0), (1.0, 0.0), (0.0, 1.0))):
    return Triangulation.from_arrays(V, [(0, 1, 2)])


def test_zero_data_zero_estimator():
    p = z1_problem(3.0)
    p = ProblemSpec(domain=p.domain, kappa=3.0, f=0.0)
    m = uniform_refine(p.domain())
    s = build_space(m)
    assert estimate(s, p, np.zeros(s.dof_count)).total == 0.0


def test_single_triangle_constant_load():
    m = one_triangle(((0.1, 0.2), (1.7, 0.5), (0.4, 1.9)))
    p = ProblemSpec(domain=lambda: m, kappa=0.0, f=1.0)
    ind = estimate(build_space(m), p, np.zeros(0))
    area = m.areas[0]
    # h_T^2 |T| with h_T^2 = |T|
    assert ind.eta_sq[0] == pytest.approx(area ** 2, rel=1e-14)


def test_jump_term_on_square_by_hand():
    bnd = [(0, 1, NEUMANN), (1, 2, NEUMANN), (2, 3, NEUMANN), (3, 0, NEUMANN)]
    m = Triangulation.from_arrays(SQUARE_V, SQUARE_T, bnd)
    p = ProblemSpec(domain=lambda: m, kappa=0.0)
    s = build_space(m)
    # hat of vertex (1,0): gradient (1,-1) on the lower triangle, 0 on the upper
    x = s.from_vertex_values(np.array([0.0, 1.0, 0.0, 0.0]))
    ind = estimate(s, p, x)
    # diagonal: |E| = sqrt 2, jump (1,-1).n = sqrt 2, h_T = sqrt(1/2) -> h_T |E| jump^2 = 2
    np.testing.assert_allclose(ind.jump_sq, [2.0, 2.0], rtol=1e-14)


def test_total_consistent_with_sum():
    p = z2_problem(2.0)
    s, _, x = solved(p, random_refinements(p.domain(), np.random.default_rng(0), 4)[-1])
    ind = estimate(s, p, x)
    assert np.all(ind.eta_sq >= 0)
    assert ind.total ** 2 == pytest.approx(ind.eta_sq.sum(), rel=1e-13)
    np.testing.assert_allclose(ind.volume_sq + ind.jump_sq + ind.neumann_sq, ind.eta_sq, rtol=1e-15)


@settings(max_examples=25)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_jump_contribution_independent_of_element_order(seed, tmp_path_factory):
    rng = np.random.default_rng(seed)
    p = z1_problem(2.0)
    m = random_refinements(p.domain(), rng, 3)[-1]
    s, _, x = solved(p, m)
    ind = estimate(s, p, x)
    perm = rng.permutation(m.n_elements)
    T = m.triangles[perm]
    shuffled = Triangulation.from_arrays(m.vertices, T, m.boundary_edges, assign_refinement_edges=False)
    s2 = build_space(shuffled)
    ind2 = estimate(s2, p, s2.from_vertex_values(s.to_vertex_values(x)))
    np.testing.assert_allclose(ind2.jump_sq, ind.jump_sq[perm], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(ind2.eta_sq, ind.eta_sq[perm], rtol=1e-12, atol=1e-15)


def test_exact_discrete_solution_has_zero_estimator_and_residual():
    # u = x on the unit square, Dirichlet on x = 0, Neumann elsewhere
    bnd = [(0, 1, NEUMANN), (1, 2, NEUMANN), (2, 3, NEUMANN), (3, 0, DIRICHLET)]
    mk = lambda: Triangulation.from_arrays(SQUARE_V, SQUARE_T, bnd)
    ex = ExactSolution(value=lambda x, y: x, grad=lambda x, y: (np.ones_like(x), np.zeros_like(x)))
    p = ProblemSpec(domain=mk, kappa=0.0, f=0.0, g="manufactured", exact=ex)
    m = uniform_refine(mk())
    s, _, x = solved(p, m)
    assert estimate(s, p, x).total <= 1e-13
    f = refine(m, [0])
    sf = build_space(f)
    Sf = assemble(sf, p)
    r = Sf.rhs - Sf.matrix @ prolongate(s, sf, x)
    assert np.abs(r).max() <= 1e-13


@pytest.mark.parametrize("s", [-3.0, 0.5, 7.0])
def test_scaling(s):
    p = z2_problem(2.0)
    m = random_refinements(p.domain(), np.random.default_rng(2), 3)[-1]
    sp_, _, x = solved(p, m)
    q = p.scaled(s)
    _, _, xs = solved(q, m)
    np.testing.assert_allclose(xs, s * x, rtol=1e-10, atol=1e-14)
    assert estimate(sp_, q, xs).total == pytest.approx(abs(s) * estimate(sp_, p, x).total, rel=1e-10)
    assert h1_error(sp_, q, xs) == pytest.approx(abs(s) * h1_error(sp_, p, x), rel=1e-10)


# -- oscillation -------------------------------------------------------------------

def test_oscillation_constant_data():
    m = one_triangle(((0.0, 0.0), (2.0, 0.3), (0.5, 1.0)))
    p = ProblemSpec(domain=lambda: m, kappa=0.0, f=3.0)
    assert oscillation(build_space(m), p, np.zeros(0), q=0)[0] == pytest.approx(0.0, abs=1e-15)


def test_oscillation_linear_data_closed_form():
    V = np.array([(0.0, 0.0), (2.0, 0.3), (0.5, 1.0)])
    m = one_triangle(V)
    p = ProblemSpec(domain=lambda: m, kappa=0.0, f=lambda x, y: x)
    area = m.areas[0]
    x = V[:, 0]
    # int_T (x - xbar)^2 = |T|/12 sum (x_i - xbar)^2
    ref = area * area / 12 * np.sum((x - x.mean()) ** 2)
    osc = oscillation(build_space(m), p, np.zeros(0), q=0)
    assert osc[0] == pytest.approx(ref, rel=1e-13)
    assert oscillation(build_space(m), p, np.zeros(0), q=1)[0] == pytest.approx(0.0, abs=1e-15)


def test_oscillation_rejects_degree():
    m = one_triangle()
    p = ProblemSpec(domain=lambda: m, kappa=0.0, f=1.0)
    with pytest.raises(ValueError):
        oscillation(build_space(m), p, np.zeros(0), q=2)


# -- axioms and reduction ---------------------------------------------------------------

def test_axioms_identical_meshes():
    p = z1_problem(2.0)
    m = uniform_refine(p.domain())
    s, S, x = solved(p, m)
    ind = estimate(s, p, x)
    rep = measure_axioms((s, ind, x), (s, ind, x, S))
    assert isinstance(rep, AxiomReport)
    assert rep.stability_gap == 0.0
    assert rep.correction_h1 == 0.0
    assert rep.stability is None and rep.n_refined == 0


@pytest.mark.parametrize("uniform", [False, True])
def test_axioms_finite_on_refinement_pairs(uniform):
    p = z1_problem(2.0)
    m = uniform_refine(p.domain())
    s, S, x = solved(p, m)
    ind = estimate(s, p, x)
    f = uniform_refine(m) if uniform else refine(m, np.argsort(-ind.eta_sq)[:3])
    sf, Sf, xf = solved(p, f)
    rep = measure_axioms((s, ind, x), (sf, estimate(sf, p, xf), xf, Sf))
    for v in (rep.reduction, rep.reliability):
        assert v is not None and np.isfinite(v)
    if not uniform:
        assert rep.stability is not None and np.isfinite(rep.stability)


def test_axioms_require_nesting():
    p = z1_problem(2.0)
    a = p.domain()
    b = p.domain()
    s, S, x = solved(p, uniform_refine(a))
    t, St, y = solved(p, uniform_refine(b))
    with pytest.raises(ValueError):
        measure_axioms((s, estimate(s, p, x), x), (t, estimate(t, p, y), y, St))


def test_reduction_check_arithmetic():
    assert estimator_reduction_check(1.0, 0.8, 0.0, 0.7, 4.0)
    assert not estimator_reduction_check(1.0, 1.0, 0.0, 0.7, 4.0)
    assert estimator_reduction_check(1.0, 1.0, 0.3, 0.7, 4.0)


def test_calibration():
    assert calibrated_q_est(1.0) == pytest.approx(1 - 0.5 * (1 - Q_RED))
    assert 0 < calibrated_q_est(0.2) < 1
    etas = [1.0, 0.9, 0.85]
    corr = [0.1, 0.2]
    q = 0.7
    c = calibrate_c_est(etas, corr, q)
    for k in range(2):
        assert estimator_reduction_check(etas[k], etas[k + 1], corr[k], q, c)
    assert c == pytest.approx(2 * max((0.81 - 0.7) / 0.01, (0.7225 - 0.567) / 0.04))


def test_dump_indicators(tmp_path):
    p = z1_problem(2.0)
    s, _, x = solved(p, uniform_refine(p.domain()))
    ind = estimate(s, p, x)
    path = tmp_path / "eta.csv"
    dump_indicators(ind, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "element_id,eta_sq"
    assert len(lines) == s.mesh.n_elements + 1
    assert float(lines[3].split(",")[1]) == ind.eta_sq[2]
