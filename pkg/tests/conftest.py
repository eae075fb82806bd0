import pytest
from hypothesis import HealthCheck, settings

from afem.mesh import Triangulation, refine, z_domain

settings.register_profile("afem", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("afem")

SQUARE_V = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
SQUARE_T = [(0, 1, 2), (0, 2, 3)]


def square(boundary=None) -> Triangulation:
    """Unit square split along the diagonal (0,0)-(1,1); both refinement edges on it."""
    return Triangulation.from_arrays(SQUARE_V, SQUARE_T, boundary)


@pytest.fixture
def unit_square():
    return square()


@pytest.fixture(params=["single_cut", "symmetric_cut"])
def zmesh(request):
    return z_domain(request.param)


def random_refinements(mesh, rng, steps, frac=0.3):
    out = [mesh]
    for _ in range(steps):
        m = out[-1]
        k = max(1, int(frac * m.n_elements * rng.random()))
        out.append(refine(m, rng.choice(m.n_elements, size=k, replace=False)))
    return out
