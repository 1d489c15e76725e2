import json
import math

import numpy as np
import pytest

from conftest import tiny_params
from tiltlace.interlace import (BallGeometry, InterlacementSampler, WindowGeometry, enclosing_geometry,
                                importance_weight, sample_interlacement, sample_tilted_interlacement, vacant)
from tiltlace.lattice import SiteSet, box
from tiltlace.potential import capacity, equilibrium_and_capacity, tilt_support, tilted_equilibrium_and_capacity
from tiltlace.tilt import build_profile
from tiltlace.walk import RngStream

ZERO = (0, 0, 0)
CAP0 = 0.659463


def within(x, mean, se, k=3.0):
    return abs(x - mean) <= k * se


@pytest.fixture(scope="module")
def tiny():
    return build_profile(tiny_params())


@pytest.fixture(scope="module")
def window12():
    return WindowGeometry(box(ZERO, 12))


# -- path-level samplers --------------------------------------------------------

def test_zero_level_is_empty():
    s = sample_interlacement(SiteSet([ZERO]), 0.0, RngStream(0))
    assert s.count == 0 and len(s.trace) == 0
    assert vacant(s, SiteSet([ZERO])) == SiteSet([ZERO])


def test_point_window_counts_and_vacancy():
    M = SiteSet([ZERO])
    n = 4000
    rng = RngStream(1)
    counts = np.array([sample_interlacement(M, 1.0, rng, timed=False).count for _ in range(n)])
    assert within(counts.mean(), CAP0, math.sqrt(CAP0 / n))
    # the trace of a window {0} is nonempty exactly when some trajectory enters
    p = math.exp(-CAP0)
    assert within(np.mean(counts == 0), p, math.sqrt(p * (1 - p) / n))


def test_sample_trajectories_start_on_window():
    M = box(ZERO, 2)
    s = sample_interlacement(M, 2.0, RngStream(2))
    eq = equilibrium_and_capacity(M)
    assert s.count == len(s.trajectories)
    for tr in s.trajectories:
        assert eq.weight_on(tr.sites[:1])[0] > 0
    allsites = np.concatenate([t.sites for t in s.trajectories]) if s.trajectories else np.zeros((0, 3))
    assert s.trace.issubset(SiteSet(allsites, d=3)) if len(allsites) else len(s.trace) == 0


def test_vacant_set_identities():
    M = box(ZERO, 3)
    region = box(ZERO, 1)
    s = sample_interlacement(M, 1.5, RngStream(3))
    V = vacant(s, region)
    T = s.trace.intersection(region)
    assert len(V.intersection(T)) == 0
    assert V.union(T) == region
    with pytest.raises(ValueError):
        vacant(s, box(ZERO, 5))


def test_summary_json():
    s = sample_interlacement(box(ZERO, 1), 1.0, RngStream(4, 7))
    rec = json.loads(s.to_json(weight=1.0))
    assert set(rec) == {"seed", "stream", "count", "trace_size", "weight", "bias_bound"}
    assert rec["seed"] == 4 and rec["stream"] == 7 and rec["bias_bound"] == 0.0


def test_path_sampler_deterministic(tiny):
    M = box(ZERO, 12)
    a = sample_tilted_interlacement(M, tiny, RngStream(5, 1))
    b = sample_tilted_interlacement(M, tiny, RngStream(5, 1))
    assert a.count == b.count and a.trace == b.trace and np.array_equal(a.F, b.F)


def test_importance_weight_trivial_cases(tiny):
    s = sample_interlacement(box(ZERO, 2), 1.0, RngStream(6))
    assert importance_weight(s, None) == 1.0
    flat = build_profile(tiny_params(u=0.5))
    assert flat.plateau == 1.0
    t = sample_tilted_interlacement(box(ZERO, 12), flat, RngStream(6))
    assert importance_weight(t, flat) == 1.0


def test_importance_weight_needs_holding_times(tiny):
    s = sample_interlacement(box(ZERO, 12), 0.4, RngStream(8), timed=False, profile=tiny)
    if s.count:
        with pytest.raises(ValueError):
            importance_weight(s, tiny)


def test_tilted_window_must_contain_support(tiny):
    with pytest.raises(ValueError, match="tilt support"):
        sample_tilted_interlacement(box(ZERO, 3), tiny, RngStream(0))


def test_path_and_batch_samplers_agree():
    # one-point occupation of the origin at u = 0.5 from both samplers
    n = 3000
    geo = WindowGeometry(box(ZERO, 4))
    rng = RngStream(9)
    hits = np.mean([ZERO in sample_interlacement(geo.M, 0.5, rng, timed=False).trace for _ in range(n)])
    res = InterlacementSampler(geo, [0.5], observe=SiteSet([ZERO])).run(20000, RngStream(10))
    q = res.occupied(0)[:, 0].mean()
    se = math.sqrt(q * (1 - q) / n + q * (1 - q) / 20000)
    assert within(hits, q, se)
    assert q == pytest.approx(1 - math.exp(-0.5 * CAP0), abs=0.02)


# -- batch sampler ---------------------------------------------------------------

@pytest.mark.parametrize("u", [0.5, 1.0])
@pytest.mark.parametrize("shape", ["point", "cube2"])
def test_vacancy_law(u, shape):
    region = SiteSet([ZERO]) if shape == "point" else SiteSet(np.argwhere(np.ones((2, 2, 2))))
    geo = WindowGeometry(box(ZERO, 4))
    n = 20000
    res = InterlacementSampler(geo, [u], observe=region).run(n, RngStream(11))
    empty = ~res.occupied(0).any(axis=1)
    p = math.exp(-u * capacity(region))
    assert within(empty.mean(), p, math.sqrt(p * (1 - p) / n))


def test_poisson_counts(window12):
    n = 20000
    res = InterlacementSampler(window12, [0.2]).run(n, RngStream(12), timed=False)
    c = res.count[:, 0]
    lam = 0.2 * window12.capacity
    assert within(c.mean(), lam, math.sqrt(lam / n))
    # Var of the sample variance of Poisson: (lam + 2 lam^2 (n/(n-1))) / n
    assert within(c.var(ddof=1), lam, math.sqrt((lam + 2 * lam ** 2) / n), k=4.0)


def test_monotone_coupling(window12):
    levels = [0.1, 0.2, 0.4]
    obs = box(ZERO, 2)
    res = InterlacementSampler(window12, levels, observe=obs, K=box(ZERO, 1)).run(500, RngStream(13))
    assert np.all(np.diff(res.trace_size, axis=1) >= 0)
    assert np.all(np.diff(res.count, axis=1) >= 0)
    assert np.all(np.diff(res.disconnected.astype(int), axis=1) >= 0)
    for i in range(len(levels) - 1):
        assert np.all(res.occupied(i) <= res.occupied(i + 1))


def test_batch_determinism(window12, tiny):
    s = InterlacementSampler(window12, [0.4], profile=tiny, tilted=True, K=box(ZERO, 1))
    a = s.run(200, RngStream(14, 3))
    b = s.clone().run(200, RngStream(14, 3))
    assert np.array_equal(a.F, b.F) and np.array_equal(a.trace_size, b.trace_size)
    assert a.seed == 14 and a.stream == 3


def test_sampler_validation(window12, tiny):
    with pytest.raises(ValueError):
        InterlacementSampler(window12, [0.3, 0.2])
    with pytest.raises(ValueError):
        InterlacementSampler(window12, [0.3], tilted=True)
    with pytest.raises(ValueError):
        InterlacementSampler(window12, [0.3], K=SiteSet([(12, 0, 0)]))


def test_tilted_equilibrium_equals_standard_on_enclosing_window(tiny):
    # the closed tilt support sits inside M away from its inner boundary
    M = box(ZERO, 12)
    T = tilt_support(tiny)
    assert T.issubset(box(ZERO, 10))
    e = equilibrium_and_capacity(M)
    et = tilted_equilibrium_and_capacity(M, tiny)
    assert et.total == pytest.approx(e.total, rel=1e-8)
    assert np.allclose(et.weights, e.weights, atol=1e-8)


def test_tilted_capacity_differs_on_small_set(tiny):
    # on a set inside the support the tilt raises the capacity
    M = box(ZERO, 1)
    assert tilted_equilibrium_and_capacity(M, tiny).total > capacity(M)


def test_tilted_count_mean(window12, tiny):
    n = 20000
    res = InterlacementSampler(window12, [0.4], profile=tiny, tilted=True).run(n, RngStream(15))
    lam = 0.4 * tilted_equilibrium_and_capacity(window12.M, tiny).total
    assert within(res.count[:, 0].mean(), lam, math.sqrt(lam / n))


def test_flat_tilt_reproduces_standard_law(window12):
    flat = build_profile(tiny_params(u=0.5))
    n = 20000
    obs = SiteSet([ZERO, (2, 0, 0)])
    a = InterlacementSampler(window12, [0.5], profile=flat, tilted=True, observe=obs).run(n, RngStream(16))
    b = InterlacementSampler(window12, [0.5], observe=obs).run(n, RngStream(17))
    assert np.all(a.F == 0.0)
    lam = 0.5 * window12.capacity
    se = math.sqrt(2 * lam / n)
    assert within(a.count.mean(), b.count.mean(), se)
    for j in range(2):
        p, q = a.occupied(0)[:, j].mean(), b.occupied(0)[:, j].mean()
        assert within(p, q, math.sqrt(p * (1 - p) / n + q * (1 - q) / n))


def test_change_of_measure_small_run(window12, tiny):
    n = 20000
    std = InterlacementSampler(window12, [0.4], profile=tiny).run(n, RngStream(18))
    w = np.exp(std.F[:, 0])
    assert within(w.mean(), 1.0, w.std(ddof=1) / math.sqrt(n))
    til = InterlacementSampler(window12, [0.4], profile=tiny, tilted=True).run(n, RngStream(19))
    w = np.exp(-til.F[:, 0])
    assert within(w.mean(), 1.0, w.std(ddof=1) / math.sqrt(n))


def test_enclosing_geometry_choice(tiny):
    g = enclosing_geometry(tiny)
    assert isinstance(g, WindowGeometry)
    g.check_profile(tiny)
    big = enclosing_geometry(tiny, margin=30)
    assert isinstance(big, BallGeometry)
    assert math.isclose(big.bias_per_trajectory, 1 / big.rho_mid)


def test_ball_geometry_vacancy_close_to_exact():
    # far-field entrance: O(1/rho) error on the one-point vacancy
    geo = BallGeometry(10.0)
    n = 20000
    res = InterlacementSampler(geo, [1.0], observe=SiteSet([ZERO])).run(n, RngStream(20))
    p = math.exp(-CAP0)
    assert abs((~res.occupied(0)[:, 0]).mean() - p) < 0.03
