"""Acceptance criteria, one test each; every test prints a PASS/FAIL line before asserting."""
import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from conftest import ORIGIN, annulus_params, tiny_params
from tiltlace.cli import main
from tiltlace.experiments import (ExperimentConfig, alpha, coupling_check, disconnect_direct, disconnect_is,
                                  disconnect_tilted, domination_report)
from tiltlace.interlace import InterlacementSampler, WindowGeometry
from tiltlace.lattice import ShapeSpec, SiteSet, box
from tiltlace.potential import (capacity, equilibrium_and_capacity, equilibrium_residual, sweeping_residual,
                                transition_matrix)
from tiltlace.tilt import K_N, TiltParams, build_profile, dirichlet_scan, entropy
from tiltlace.walk import RngStream, martingale_samples, psi

ZERO = (0, 0, 0)


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {k}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


def test_criterion_01_equilibrium_and_sweeping(report):
    eq_res = max(equilibrium_residual(box(ZERO, r), equilibrium_and_capacity(box(ZERO, r))) for r in (1, 2, 3))
    point = SiteSet([ZERO])
    pairs = [(point, box(ZERO, 1)), (point, box(ZERO, 3)), (box(ZERO, 1), box(ZERO, 2)), (box(ZERO, 1), box(ZERO, 3)),
             (box(ZERO, 2), box(ZERO, 3))]
    sw_res = max(sweeping_residual(M, Mp) for M, Mp in pairs)
    ok = eq_res <= 1e-6 and sw_res <= 1e-6
    report(1, ok, f"equilibrium residual {eq_res:.2e}, sweeping residual {sw_res:.2e} (tol 1e-6)")
    assert ok


def killed_g00(L):
    U = box(ZERO, L)
    A = sp.identity(len(U), format="csr") - transition_matrix(U)
    b = np.zeros(len(U))
    i = U.index_of(np.zeros((1, 3), dtype=np.int64))[0]
    b[i] = 1.0
    x, info = spla.cg(A, b, rtol=1e-12, maxiter=10000)
    assert info == 0
    return x[i]


def test_criterion_02_capacities(report):
    Ls = np.array([8, 16, 32, 48])
    vals = np.array([killed_g00(L) for L in Ls])
    A = np.stack([np.ones(4), 1.0 / Ls, 1.0 / Ls ** 2, 1.0 / Ls ** 3], axis=1)
    g00 = np.linalg.solve(A, vals)[0]
    cap0 = capacity(SiteSet([ZERO]))
    pair = capacity(SiteSet([ZERO, (1, 0, 0)]))
    ok = abs(g00 - 1.516386) <= 1e-5 and abs(cap0 - 0.659463) <= 1e-4 and abs(1 / g00 - cap0) <= 1e-4 \
        and abs(pair - 0.983886) <= 1e-4
    report(2, ok, f"g(0,0) extrapolated {g00:.7f}, cap(0) {cap0:.6f}, pair {pair:.6f}")
    assert ok


def test_criterion_03_alpha(report):
    a = [alpha(N, c1=2.0) for N in (16, 32, 64)]
    ok = a[0] > a[1] > a[2] and a[2] < 0.25
    report(3, ok, "alpha(16, 32, 64) = " + ", ".join(f"{v:.5f}" for v in a))
    assert ok


def test_criterion_04_martingale_and_psi(report):
    prof = build_profile(tiny_params())
    n = 100_000
    M = martingale_samples(prof, (1, 0, 0), n, RngStream(401), t=6.0)
    se = M.std(ddof=1) / math.sqrt(n)
    ps = psi(prof, box(ZERO, 12).coords)
    ok = abs(M.mean() - 1.0) <= 3 * se and bool(np.all(ps >= 0.0))
    report(4, ok, f"mean M_t {M.mean():.5f} +- {se:.5f}; min psi on window {ps.min():.3e}")
    assert ok


def test_criterion_05_entropy_identity(report):
    rels = []
    for N in (50, 100):
        direct, formula = entropy(build_profile(annulus_params(N)))
        rels.append(abs(direct - formula) / abs(formula))
    ok = max(rels) <= 1e-8
    report(5, ok, "relative gaps at N=50, 100: " + ", ".join(f"{r:.2e}" for r in rels))
    assert ok


def test_criterion_06_capacity_limit(report):
    target = (1 / 3) * 2 * math.pi / (1 / 1.2 - 1 / 10)
    rows = dirichlet_scan(annulus_params(), [50, 100, 200])
    errs = [abs(r.scaled_energy - target) / target for r in rows]
    ok = errs[-1] <= 0.05 and errs[0] > errs[1] > errs[2]
    report(6, ok, f"target {target:.5f}; E/N at N=50,100,200: "
           + ", ".join(f"{r.scaled_energy:.5f}" for r in rows) + "; rel. errors " + ", ".join(f"{e:.4f}" for e in errs))
    assert ok


def test_criterion_07_interlacement_law(report):
    n = 100_000
    geo = WindowGeometry(box(ZERO, 4))
    res = InterlacementSampler(geo, [1.0], observe=SiteSet([ZERO])).run(n, RngStream(701))
    vac = float((~res.occupied(0)[:, 0]).mean())
    p = math.exp(-0.659463)
    se = math.sqrt(p * (1 - p) / n)
    c = res.count[:, 0]
    lam = geo.capacity
    ok_mean = abs(c.mean() - lam) <= 4 * math.sqrt(lam / n)
    ok_var = abs(c.var(ddof=1) - lam) <= 4 * math.sqrt((lam + 2 * lam ** 2) / n)
    ok = abs(vac - p) <= 3 * se and ok_mean and ok_var
    report(7, ok, f"vacancy {vac:.5f} vs {p:.5f} (s.e. {se:.5f}); count mean {c.mean():.4f}, "
           f"variance {c.var(ddof=1):.4f}, Poisson parameter {lam:.4f}")
    assert ok


@pytest.mark.slow
def test_criterion_08_change_of_measure(report):
    prof = build_profile(tiny_params(epsilon=0.3))
    geo = WindowGeometry(box(ZERO, 12))
    n = 100_000
    std = InterlacementSampler(geo, [prof.params.u], profile=prof).run(n, RngStream(801))
    til = InterlacementSampler(geo, [prof.params.u], profile=prof, tilted=True).run(n, RngStream(802))
    w1, w2 = np.exp(std.F[:, 0]), np.exp(-til.F[:, 0])
    s1, s2 = w1.std(ddof=1) / math.sqrt(n), w2.std(ddof=1) / math.sqrt(n)
    ok = abs(w1.mean() - 1) <= 3 * s1 and abs(w2.mean() - 1) <= 3 * s2
    report(8, ok, f"E[e^F] standard {w1.mean():.5f} +- {s1:.5f}; E[e^-F] tilted {w2.mean():.5f} +- {s2:.5f}")
    assert ok


@pytest.mark.slow
def test_criterion_09_estimator_cross_validation(report):
    cfg = ExperimentConfig(tiny_params(), 12, replicas=100_000, seed=901)
    assert len(K_N(cfg.params(2))) == 27
    isr = disconnect_is(cfg, None, 2)
    dr = disconnect_direct(cfg, 0.4, 2)
    lo, hi = isr.extra["ci_linear"]
    ok = lo <= dr.ci[1] and dr.ci[0] <= hi
    report(9, ok, f"IS {isr.extra['mean']:.5f} CI [{lo:.5f}, {hi:.5f}] (ESS {isr.extra['ess']:.0f}); "
           f"direct {dr.estimate:.5f} CI [{dr.ci[0]:.5f}, {dr.ci[1]:.5f}]")
    assert ok


def domination_cfg():
    tp = TiltParams(u=0.25, u_star2=0.05, epsilon=0.95, delta=0.99, eta=0.05, r_U=4.0,
                    shape=ShapeSpec("point", ORIGIN), N=64)
    return ExperimentConfig(tp, 12, exponents=(0.01, 0.2, 0.4, 0.65), seed=1001)


@pytest.mark.slow
def test_criterion_10_domination(report):
    cfg = domination_cfg()
    assert cfg.tilt.plateau ** 2 == pytest.approx(4.0)
    rep = domination_report(cfg, 64, n_centres=3, walks=600, n_starts=6)
    cap = min(r.capacity_margin for r in rep.rows)
    eqm = min(r.equilibrium_margin for r in rep.rows)
    ent = min(r.entrance_margin for r in rep.rows)
    ok = rep.occupation_residual <= 1e-6 and rep.margins_positive
    report(10, ok, f"occupation residual {rep.occupation_residual:.2e}; min margins: capacity {cap:.4f}, "
           f"equilibrium {eqm:.4f}, entrance {ent:.4f}; notes: {'; '.join(rep.notes)}")
    assert ok


def trend_cfg():
    u_star2, eps = 5.0, 1.0
    tp = TiltParams(u=0.3 * u_star2, u_star2=u_star2, epsilon=eps, delta=0.4, eta=0.05, r_U=2.0,
                    shape=ShapeSpec("ball", ORIGIN, 1.0), N=20)
    N_list = (20, 30, 40)
    W = int(math.floor(tp.r_Utilde * max(N_list))) + 2
    return ExperimentConfig(tp, W, N_list, replicas=40, seed=1101, window_norm="euclidean", batch_size=10)


@pytest.mark.slow
def test_criterion_11_tilted_trend(report):
    tab = disconnect_tilted(trend_cfg())
    ok = not tab.inconclusive
    report(11, ok, "tilted frequencies " + ", ".join(f"N={N}: {r.estimate:.3f} +- {r.std_error:.3f}" for N, r in tab.rows)
           + (f"; flags: {tab.flags}" if tab.flags else ""))
    assert ok


RUN = """[tilt]
u = 0.4
u_star2 = 0.3
epsilon = 0.2
delta = 0.95
eta = 0.05
r_U = 1.95
shape = "point"
N = 2

[experiment]
window_radius = 12
replicas = 3000
batch_size = 1000
"""


def test_criterion_12_reproducibility(tmp_path, report):
    cfg = tmp_path / "run.ini"
    cfg.write_text(RUN)
    same = []
    for cmd in ("disconnect-is", "disconnect-direct", "sample"):
        outs = [tmp_path / f"{cmd}-{k}" for k in range(2)]
        for o in outs:
            assert main([cmd, "--config", str(cfg), "--seed", "1201", "--out", str(o)]) in (0, 3)
        same.append((outs[0] / "results.csv").read_bytes() == (outs[1] / "results.csv").read_bytes())
    ok = all(same)
    report(12, ok, f"byte-identical results.csv for disconnect-is, disconnect-direct, sample: {same}")
    assert ok


@pytest.mark.slow
def test_coupling_panel_at_desk_scale(capsys):
    # tilted occupation dominates the standard one at u_** + eps/8 on a 20-event panel
    tp = TiltParams(u=0.25, u_star2=0.05, epsilon=0.95, delta=0.95, eta=0.05, r_U=2.0,
                    shape=ShapeSpec("point", ORIGIN), N=6)
    rep = coupling_check(ExperimentConfig(tp, 40, replicas=100_000, seed=1301), 6)
    with capsys.disabled():
        print(f"\ncoupling panel: {len(rep.events)} events, violations {rep.violations}, trace means "
              f"{rep.trace_mean_tilted:.3f} vs {rep.trace_mean_standard:.3f}")
    assert len(rep.events) == 20
    assert rep.violations == [] and rep.trace_dominates
