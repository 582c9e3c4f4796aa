import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from morphfit.mesh import HighOrderMesh, make_cartesian

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def perturbed_mesh(dim, counts, order, geom=None, amp=0.15, seed=0, split=None,
                   move_boundary=False) -> HighOrderMesh:
    """Cartesian mesh with random node displacements (valid for small ``amp``).

    ``amp`` is relative to the node spacing ``1 / (counts * order)``.
    Boundary nodes stay put unless ``move_boundary`` is set, in which case
    they slide tangentially.
    """
    m = make_cartesian(dim, counts, order, geom=geom, split=split)
    rng = np.random.default_rng(seed)
    h = 1.0 / (np.max(counts) * order)
    dx = amp * h * rng.uniform(-1, 1, m.coords.shape)
    on_lo = np.isclose(m.coords, 0.0)
    on_hi = np.isclose(m.coords, 1.0)
    fixed_comp = on_lo | on_hi
    if move_boundary:
        dx[fixed_comp] = 0.0
    else:
        dx[np.any(fixed_comp, axis=1)] = 0.0
    return m.with_coords(m.coords + dx)


def fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
