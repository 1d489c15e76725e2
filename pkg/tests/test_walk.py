import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import grid_profile, tiny_params
from tiltlace.lattice import SiteSet, box
from tiltlace.potential import green
from tiltlace.tilt import TiltProfile, build_profile
from tiltlace.walk import (ExactShell, FarField, RngStream, StopRule, Trajectory, hitting_counts, jump_counts,
                           jump_probabilities, martingale_samples, martingale_weight, potential_integral, psi,
                           sample_walk)

ZERO = (0, 0, 0)
UNIT = np.eye(3, dtype=np.int64)
# direction order +e1, -e1, +e2, -e2, +e3, -e3
DIRS = np.array([s * UNIT[i] for i in range(3) for s in (1, -1)])


@pytest.fixture(scope="module")
def tiny():
    return build_profile(tiny_params())


def exit_one_site(profile, x, n, seed):
    """First-jump directions and holding times of n walks leaving {x}."""
    stop = StopRule.exit(SiteSet([x]))
    rng = RngStream(seed)
    dirs = np.empty(n, dtype=np.int64)
    hold = np.empty(n)
    for k in range(n):
        tr = sample_walk(x, profile, stop, rng)
        step = tr.sites[1] - tr.sites[0]
        dirs[k] = int(np.nonzero((DIRS == step).all(axis=1))[0][0])
        hold[k] = tr.holding[0]
    return dirs, hold


def test_exit_from_single_site_uniform():
    dirs, hold = exit_one_site(None, ZERO, 6000, 1)
    counts = np.bincount(dirs, minlength=6)
    assert stats.chisquare(counts).pvalue > 1e-3
    assert abs(hold.mean() - 1.0) < 3 * hold.std() / math.sqrt(len(hold))


def test_tilted_rates_from_two_site_values():
    # f(0) = 2, f(e1) = 3, other neighbours 1: jump to e1 at rate 3/(6*2) = 0.25,
    # total rate 8/12, so the mean holding time is 1.5
    prof = grid_profile({ZERO: 2.0, (1, 0, 0): 3.0})
    x = np.array(ZERO)
    assert prof.f(x + UNIT[0]) / (6 * prof.f(x)) == pytest.approx(0.25)
    assert prof.V(x[None])[0] == pytest.approx(1 - 8 / 12)
    p = jump_probabilities(prof, ZERO)
    assert p[0] == pytest.approx(3 / 8)
    dirs, hold = exit_one_site(prof, ZERO, 6000, 2)
    assert abs(hold.mean() - 1.5) < 3 * hold.std() / math.sqrt(len(hold))
    phat = np.mean(dirs == 0)
    assert abs(phat - 3 / 8) < 3 * math.sqrt(3 / 8 * 5 / 8 / len(dirs))


def test_uniform_profile_rates_match_simple_walk():
    u = TiltProfile.uniform()
    assert np.allclose(jump_probabilities(u, ZERO), 1 / 6)
    assert u.V(np.array([ZERO]))[0] == 0.0


def test_jump_frequencies_chi_square(tiny):
    # a site on the slope of the tilt, where the six rates differ
    x = (3, 1, 0)
    p = jump_probabilities(tiny, x)
    assert np.ptp(p) > 0.01
    n = 100000
    counts = jump_counts(tiny, x, n, RngStream(3))
    assert counts.sum() == n
    assert stats.chisquare(counts, n * p).pvalue > 1e-3


def test_trajectories_nearest_neighbour_and_positive_holding(tiny):
    tr = sample_walk((5, 0, 0), tiny, StopRule.exit(box(ZERO, 6)), RngStream(4))
    steps = np.abs(np.diff(tr.sites, axis=0)).sum(axis=1)
    assert np.all(steps == 1)
    assert np.all(tr.holding > 0)
    assert tr.terminal_reason == "exited_domain"
    assert not box(ZERO, 6).contains(tr.sites[-1:])[0]


def test_walk_determinism(tiny):
    stop = StopRule.time(50.0)
    a = sample_walk(ZERO, tiny, stop, RngStream(9, 2))
    b = sample_walk(ZERO, tiny, stop, RngStream(9, 2))
    c = sample_walk(ZERO, tiny, stop, RngStream(9, 3))
    assert np.array_equal(a.sites, b.sites) and np.array_equal(a.holding, b.holding)
    assert not (len(a) == len(c) and np.array_equal(a.holding, c.holding))


def test_time_rule_truncates_last_holding(tiny):
    tr = sample_walk(ZERO, tiny, StopRule.time(7.5), RngStream(5))
    assert tr.terminal_reason == "time_reached"
    assert tr.integral_to_end
    assert tr.holding.sum() == pytest.approx(7.5)


def test_escape_rule_breaks_are_exterior_jumps():
    W = box(ZERO, 3)
    tr = sample_walk(ZERO, None, StopRule.escape(W), RngStream(6))
    assert tr.terminal_reason == "escape_declared"
    jumps = np.abs(np.diff(tr.sites, axis=0)).sum(axis=1)
    ok = np.ones(len(jumps), dtype=bool)
    ok[tr.breaks - 1] = False
    assert np.all(jumps[ok] == 1)


def test_stop_rule_validation():
    with pytest.raises(ValueError):
        StopRule.time(0.0)
    with pytest.raises(ValueError):
        StopRule.escape(box(ZERO, 2), tol=1.5)


def test_jump_cap_fails_loudly():
    with pytest.raises(RuntimeError, match="hard cap"):
        sample_walk(ZERO, None, StopRule.exit(box(ZERO, 50)), RngStream(0), cap=10)


def test_csv_export(tmp_path):
    tr = sample_walk(ZERO, None, StopRule.exit(box(ZERO, 1)), RngStream(7))
    p = tmp_path / "t.csv"
    tr.to_csv(str(p))
    lines = p.read_text().splitlines()
    assert lines[0] == "step_index,x1,x2,x3,holding"
    assert len(lines) == len(tr) + 1


# -- functionals ---------------------------------------------------------------

def test_potential_integral_trivial_cases(tiny):
    tr = sample_walk(ZERO, None, StopRule.exit(box(ZERO, 2)), RngStream(8))
    assert potential_integral(tr, None) == 0.0
    assert potential_integral(tr, TiltProfile.uniform()) == 0.0
    far = Trajectory(np.array([[40, 0, 0], [41, 0, 0]]), np.array([2.0, 1.0]), "exited_domain")
    assert potential_integral(far, tiny) == 0.0
    assert martingale_weight(tr, None) == 1.0


def test_potential_integral_single_step():
    prof = grid_profile({ZERO: 2.0, (1, 0, 0): 3.0})
    V = prof.V(np.array([ZERO]))[0]
    tr = Trajectory(np.array([ZERO]), np.array([3.0]), "time_reached", integral_to_end=True)
    assert potential_integral(tr, prof) == pytest.approx(3.0 * V)


def test_martingale_fixed_time(tiny):
    n = 20000
    M = martingale_samples(tiny, (1, 0, 0), n, RngStream(10), t=6.0)
    assert np.all(M > 0)
    assert abs(M.mean() - 1.0) < 3 * M.std(ddof=1) / math.sqrt(n)


def test_martingale_at_escape(tiny):
    n = 20000
    W = box(ZERO, 12)
    M = martingale_samples(tiny, ZERO, n, RngStream(11), window=W)
    assert abs(M.mean() - 1.0) < 3 * M.std(ddof=1) / math.sqrt(n)


def test_martingale_uniform_profile_is_one():
    M = martingale_samples(TiltProfile.uniform(), ZERO, 100, RngStream(12), t=3.0)
    assert np.all(M == 1.0)


def test_psi_values():
    e = math.e
    prof = grid_profile({(1, 0, 0): e})
    # f(0) = 1, one neighbour at e
    assert psi(prof, np.array([ZERO]))[0] == pytest.approx((e * 1 - (e - 1)) / 6, rel=1e-12)
    assert psi(prof, np.array([[10, 10, 10]]))[0] == 0.0
    assert psi(None, np.array([ZERO]))[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1.0, 3.0), min_size=7, max_size=7))
def test_psi_nonnegative(vals):
    sites = [ZERO] + [tuple(d) for d in DIRS]
    prof = grid_profile(dict(zip(sites, vals)))
    assert psi(prof, np.array([ZERO]))[0] >= 0.0


def test_psi_nonnegative_on_tiny_window(tiny):
    X = box(ZERO, 8).coords
    assert np.all(psi(tiny, X) >= 0.0)


# -- hitting -------------------------------------------------------------------

def test_hitting_probability_of_origin():
    # P_x[H_0 < inf] = g(x, 0) / g(0, 0)
    starts = np.array([[1, 0, 0], [2, 1, 0]])
    n = 20000
    shell = ExactShell(box(ZERO, 4))
    hits = hitting_counts(starts, None, SiteSet([ZERO]), n, RngStream(13), shell)
    for s, h in zip(starts, hits):
        p = green(s, ZERO) / green(ZERO, ZERO)
        assert abs(h / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_far_field_validation():
    with pytest.raises(ValueError):
        FarField(10.0, 10.5)
    assert FarField(10.0, 20.0).capacity == pytest.approx(10.0 / (3 / (2 * math.pi)))
