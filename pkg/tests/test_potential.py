import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma

from tiltlace.lattice import SiteSet, box, boundaries
from tiltlace.potential import (KilledSolver, c0, capacity, dirichlet_form, entrance_measure,
                                equilibrium_and_capacity, equilibrium_residual, expected_occupation,
                                free_green, green, green_asymptotic, killed_green_table, sweeping_residual,
                                transition_matrix)

ORIGIN = np.zeros((1, 3), dtype=np.int64)

# closed form of the lattice Green integral at the origin in d = 3
G00 = math.sqrt(6) / (32 * math.pi ** 3) * gamma(1 / 24) * gamma(5 / 24) * gamma(7 / 24) * gamma(11 / 24)


def killed_g00(L: int) -> float:
    """g_U(0, 0) for U the sup box of radius L, by conjugate gradients."""
    U = box((0, 0, 0), L)
    A = sp.identity(len(U), format="csr") - transition_matrix(U)
    b = np.zeros(len(U))
    i = U.index_of(ORIGIN)[0]
    b[i] = 1.0
    x, info = spla.cg(A, b, rtol=1e-12, maxiter=10000)
    assert info == 0
    return float(x[i])


def test_g00_closed_form():
    assert green((0, 0, 0), (0, 0, 0)) == pytest.approx(G00, abs=1e-9)
    assert G00 == pytest.approx(1.516386, abs=1e-6)


def test_g00_killed_box_extrapolation():
    # g_L(0) = g(0) - a/L - b/L^2 - c/L^3 + ...; four box sizes fix all four unknowns
    Ls = np.array([8, 16, 32, 48])
    vals = np.array([killed_g00(L) for L in Ls])
    assert np.all(np.diff(vals) > 0)
    A = np.stack([np.ones(4), 1.0 / Ls, 1.0 / Ls ** 2, 1.0 / Ls ** 3], axis=1)
    g = np.linalg.solve(A, vals)[0]
    assert g == pytest.approx(1.516386, abs=1e-5)
    assert green((0, 0, 0), (0, 0, 0)) == pytest.approx(g, abs=1e-5)


def test_neighbour_value_from_harmonicity():
    # g(0) = 1 + average of g over neighbours, all equal by symmetry
    assert green((0, 0, 0), (1, 0, 0)) == pytest.approx(G00 - 1.0, abs=1e-10)


def test_point_and_pair_capacity():
    assert capacity(SiteSet([[0, 0, 0]])) == pytest.approx(1 / G00, abs=1e-8)
    assert capacity(SiteSet([[0, 0, 0]])) == pytest.approx(0.659463, abs=1e-4)
    # two neighbours: e = 2/(g(0)+g(e1)) split evenly, g(e1) = g(0) - 1
    pair = capacity(SiteSet([[0, 0, 0], [1, 0, 0]]))
    assert pair == pytest.approx(2 / (2 * G00 - 1), abs=1e-9)
    assert pair == pytest.approx(0.983886, abs=1e-4)


def test_green_far_field_matches_table():
    G = free_green()
    z = np.array([[40, 0, 0], [30, 20, 10], [25, 25, 25]])
    assert np.allclose(G(z), green_asymptotic(z), atol=1e-7)
    assert c0(3) == pytest.approx(1 / (2 * math.pi))


def test_green_rejects_unreachable_tolerance():
    with pytest.raises(ValueError):
        green((0, 0, 0), (0, 0, 0), tol=1e-30)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_equilibrium_identity_on_boxes(r):
    M = box((0, 0, 0), r)
    eq = equilibrium_and_capacity(M)
    assert equilibrium_residual(M, eq) <= 1e-6
    assert np.all(eq.weights >= 0)
    _, inner, _ = boundaries(M)
    assert eq.sites == inner


def test_capacity_monotone_and_subadditive():
    caps = [capacity(box((0, 0, 0), r) if r else SiteSet(ORIGIN)) for r in range(4)]
    assert np.all(np.diff(caps) > 0)
    A, B = SiteSet([[0, 0, 0]]), SiteSet([[5, 0, 0]])
    assert capacity(A.union(B)) <= capacity(A) + capacity(B)


@pytest.mark.parametrize("r_in,r_out", [(0, 1), (1, 2), (1, 3), (2, 3)])
def test_sweeping_nested_boxes(r_in, r_out):
    M = box((0, 0, 0), r_in) if r_in else SiteSet(ORIGIN)
    assert sweeping_residual(M, box((0, 0, 0), r_out)) <= 1e-6


def test_killed_green_symmetric_and_dominated():
    U = box((0, 0, 0), 3)
    t = killed_green_table(U)
    assert np.allclose(t.values, t.values.T)
    G = free_green()
    assert np.all(t.values <= G.matrix(U.coords) + 1e-9)
    assert t.tol < 1e-10


def test_entrance_measure_killed_and_free():
    A = SiteSet(ORIGIN)
    B = box((0, 0, 0), 4)
    x = (2, 0, 0)
    _, p, miss = entrance_measure(A, B, x)
    # one-point target: P_x[H_0 < T_B] = g_B(x, 0) / g_B(0, 0)
    t = killed_green_table(B)
    assert p[0] == pytest.approx(t.value(x, (0, 0, 0)) / t.value((0, 0, 0), (0, 0, 0)), rel=1e-9)
    assert p[0] + miss == pytest.approx(1.0)
    _, pf, _ = entrance_measure(A, None, x)
    assert pf[0] == pytest.approx(green(x, (0, 0, 0)) / G00, rel=1e-9)
    assert pf[0] > p[0]


def test_expected_occupation_is_green_sum():
    B = box((0, 0, 0), 2)
    G = free_green()
    assert expected_occupation((5, 1, 0), B) == pytest.approx(G.matrix(np.array([[5, 1, 0]]), B.coords).sum())


def test_killed_solver_matches_dense():
    U = box((1, 0, 0), 3)
    s = KilledSolver(U)
    cols = s.columns(np.array([[1, 0, 0]]))
    t = killed_green_table(U)
    assert np.allclose(cols[:, 0], t.values[:, U.index_of(np.array([[1, 0, 0]]))[0]])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=8, max_size=8))
def test_dirichlet_form_quadratic_and_grid_consistent(vals):
    S = box((0, 0, 0), 1).coords[:8]
    f = (SiteSet(S), np.asarray(vals))
    E = dirichlet_form(f)
    assert E >= 0
    assert dirichlet_form((SiteSet(S), 2 * np.asarray(vals))) == pytest.approx(4 * E, abs=1e-9)
    grid = np.zeros((3, 3, 3))
    grid[tuple((S + 1).T)] = vals
    assert dirichlet_form(grid) == pytest.approx(E, abs=1e-9)


def test_dirichlet_form_of_indicator_is_boundary_count():
    # indicator of a single site: 2d ordered pairs each way, weight 1/(2d), halved
    assert dirichlet_form({(0, 0, 0): 1.0}) == pytest.approx(1.0)
