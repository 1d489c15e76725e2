import numpy as np
import pytest

from tiltlace.lattice import ShapeSpec
from tiltlace.tilt import TiltParams

ORIGIN = (0.0, 0.0, 0.0)


def annulus_params(N=50, eta=0.05, u=0.5, u_star2=1.0, epsilon=1.0):
    """K = unit ball, delta = 0.1 (so K^{2 delta} has radius 1.2), r_U = 10."""
    return TiltParams(u=u, u_star2=u_star2, epsilon=epsilon, delta=0.1, eta=eta, r_U=10.0,
                      shape=ShapeSpec("ball", ORIGIN, 1.0), N=N)


def tiny_params(u_star2=0.3, epsilon=0.2, u=0.4):
    """K a point at N = 2, so K_N is the 3^3 cube; the tilt support fits in a 12-window."""
    return TiltParams(u=u, u_star2=u_star2, epsilon=epsilon, delta=0.95, eta=0.05, r_U=1.95,
                      shape=ShapeSpec("point", ORIGIN, 0.0), N=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_profile(values: dict, plateau: float = 3.0):
    """Profile with prescribed f at a few sites (f = 1 elsewhere) on a small grid."""
    from tiltlace.tilt import MODE_GRID, TiltProfile
    u = 0.1
    params = TiltParams(u=u, u_star2=u * plateau ** 2 / 2, epsilon=u * plateau ** 2 / 2, delta=0.5, eta=0.1,
                        r_U=2.0, shape=ShapeSpec("point", ORIGIN), N=1)
    pts = np.array(list(values.keys()), dtype=np.int64)
    lo = pts.min(axis=0) - 1
    shape = pts.max(axis=0) - lo + 2
    h = np.zeros(tuple(shape))
    for x, f in values.items():
        h[tuple(np.asarray(x) - lo)] = (f - 1.0) / (plateau - 1.0)
    return TiltProfile(params, 3, MODE_GRID, h.ravel(), lo.astype(np.int64), shape.astype(np.int64))
