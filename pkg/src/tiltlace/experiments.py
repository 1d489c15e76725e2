"""Experiment drivers: disconnection estimators, domination margins, scans and coupling panels.

All randomness comes from ``RngStream(cfg.seed, stream)`` with stream ids
derived from the experiment tag, N and the batch index, so every output is
a deterministic function of the configuration.
"""
from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .interlace import BallGeometry, BatchResult, InterlacementSampler, WindowGeometry, enclosing_geometry
from .lattice import BoxSpec, SiteSet, ShapeSpec, box, boundaries, symmetry_representatives
from .potential import (KilledSolver, TiltedGreen, c0, entrance_matrix, equilibrium_and_capacity, free_green,
                        tilt_support, tilted_equilibrium_and_capacity)
from .tilt import (TiltParams, TiltProfile, K_N, K_N_delta, build_profile, entropy, fence, mesoscopic_sets)
from .walk import FarField, RngStream, hitting_counts

log = logging.getLogger(__name__)

Z95 = 1.959963984540054


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Settings shared by the experiment drivers.

    Attributes
    ----------
    tilt : TiltParams
        Tilt parameters; ``tilt.N`` is overridden per run.
    window_radius : int
        Radius of the analysis window, which stands in for infinity.
    N_list : tuple of int
        Scales for scans.
    replicas : int
        Monte Carlo samples per estimate.
    seed : int
    escape_tol : float
        Accepted escape tolerance (the exact exterior has none).
    exponents : tuple of float
        r1 < r2 < r3 < r4 of the mesoscopic boxes.
    window_norm : {"sup", "euclidean"}
        ``sup``: box window with exact escape. ``euclidean``: ball window
        with the far-field exterior (large windows).
    batch_size : int
        Samples per random stream.
    threads : int
        Worker threads; results do not depend on it.
    """

    tilt: TiltParams
    window_radius: int
    N_list: tuple = ()
    replicas: int = 1000
    seed: int = 0
    escape_tol: float = 0.0
    exponents: tuple = (0.01, 0.2, 0.4, 0.65)
    window_norm: str = "sup"
    batch_size: int = 10000
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "N_list", tuple(int(n) for n in self.N_list))
        object.__setattr__(self, "exponents", tuple(float(r) for r in self.exponents))
        if len(self.exponents) != 4:
            raise ValueError("exponents must be (r1, r2, r3, r4)")
        r1, r2, r3, r4 = self.exponents
        if not 0 < 2 * r1 < r2 < r3 < r4 < 1:
            raise ValueError("exponent ordering 0 < 2 r1 < r2 < r3 < r4 < 1 violated")
        for N in self.N_list:
            if not self.window_radius > self.tilt.r_Utilde * N:
                raise ValueError(f"window radius {self.window_radius} must exceed r_Utilde * N = "
                                 f"{self.tilt.r_Utilde * N:.4g} (N = {N})")
        if self.replicas < 1 or self.batch_size < 1 or self.threads < 1:
            raise ValueError("replicas, batch_size and threads must be positive")
        if self.window_norm not in ("sup", "euclidean"):
            raise ValueError("window_norm must be 'sup' or 'euclidean'")
        if not 0 <= self.escape_tol < 1:
            raise ValueError("escape_tol must lie in [0, 1)")

    def params(self, N: int | None = None, u: float | None = None) -> TiltParams:
        p = self.tilt if N is None else self.tilt.with_N(N)
        return p if u is None else replace(p, u=u)


@dataclass(frozen=True)
class EstimatorResult:
    """Monte Carlo estimate with its standard error.

    ``bias_bound`` is the certified truncation bias (0 with exact escape,
    NaN when not certified). On the log scale, ``estimate`` is log p and
    ``std_error`` its delta-method error.
    """

    estimate: float
    std_error: float
    n: int
    bias_bound: float
    seed: int
    log_scale: bool = False
    ci: tuple = (float("nan"), float("nan"))
    flags: tuple = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.std_error >= 0 and not math.isnan(self.std_error):
            raise ValueError("std_error must be nonnegative")
        if self.n < 1:
            raise ValueError("n must be positive")

    def as_dict(self) -> dict:
        out = asdict(self)
        out["ci"] = list(self.ci)
        out["flags"] = list(self.flags)
        return out


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


def _proportion(k: int, n: int, seed: int, bias: float, flags=(), extra=None) -> EstimatorResult:
    p = k / n
    flags = list(flags)
    if k == 0:
        flags.append(f"zero successes: one-sided 95% upper bound {3.0 / n:.3g}")
    if not math.isnan(bias) and p > 0 and bias > 0.01 * p:
        flags.append("bias bound above 1% of the estimate")
    if math.isnan(bias):
        flags.append("escape bias not certified (far-field exterior)")
    return EstimatorResult(p, math.sqrt(p * (1 - p) / n), n, bias, seed, False, wilson_interval(k, n), tuple(flags),
                           extra or {})


def brownian_capacity(shape: ShapeSpec | tuple, d: int = 3) -> float:
    """Brownian capacity of a ball (radius ``size``) or a point, in the lattice normalisation."""
    shapes = (shape,) if isinstance(shape, ShapeSpec) else tuple(shape)
    if len(shapes) != 1 or shapes[0].kind not in ("ball", "point"):
        return float("nan")
    s = shapes[0]
    if s.kind == "point" or s.size == 0:
        return 0.0
    return 1.0 / (s.size ** (2 - d) * c0(d))


# ---------------------------------------------------------------------------
# sampling plumbing
# ---------------------------------------------------------------------------

_GEOMETRY_CACHE: dict = {}


def _geometry(cfg: ExperimentConfig, d: int):
    key = (cfg.window_norm, cfg.window_radius, d)
    if key not in _GEOMETRY_CACHE:
        if cfg.window_norm == "sup":
            _GEOMETRY_CACHE[key] = WindowGeometry(box((0,) * d, cfg.window_radius))
        else:
            _GEOMETRY_CACHE[key] = BallGeometry(cfg.window_radius, d)
    return _GEOMETRY_CACHE[key]


def stream_id(tag: str, *keys) -> int:
    """Deterministic stream id for an experiment part."""
    return zlib.crc32(":".join([tag] + [repr(k) for k in keys]).encode())


def run_replicas(sampler: InterlacementSampler, n: int, cfg: ExperimentConfig, tag: str, *keys) -> BatchResult:
    """Run ``n`` samples split into batches of independent streams and merge them in order."""
    base = stream_id(tag, *keys)
    sizes = [min(cfg.batch_size, n - s) for s in range(0, n, cfg.batch_size)]

    def work(b, smp):
        return smp.run(sizes[b], RngStream(cfg.seed, base * 4096 + b))

    if cfg.threads > 1 and len(sizes) > 1:
        samplers = [sampler] + [sampler.clone() for _ in range(cfg.threads - 1)]
        with ThreadPoolExecutor(cfg.threads) as ex:
            parts = [None] * len(sizes)
            for start in range(0, len(sizes), cfg.threads):
                futs = {b: ex.submit(work, b, samplers[b - start]) for b in range(start, min(start + cfg.threads, len(sizes)))}
                for b, f in futs.items():
                    parts[b] = f.result()
    else:
        parts = [work(b, sampler) for b in range(len(sizes))]
    return BatchResult(parts[0].levels,
                       np.concatenate([p.count for p in parts]),
                       np.concatenate([p.F for p in parts]),
                       np.concatenate([p.disconnected for p in parts]),
                       np.concatenate([p.trace_size for p in parts]),
                       np.concatenate([p.observed for p in parts]),
                       sum(p.jumps for p in parts), parts[0].bias_per_trajectory, cfg.seed, base)


def _bias(geo, res: BatchResult, level_index: int = -1) -> float:
    if isinstance(geo, BallGeometry):
        return float("nan")
    return float(res.count[:, level_index].mean() * geo.bias_per_trajectory)


# ---------------------------------------------------------------------------
# disconnection estimators
# ---------------------------------------------------------------------------

def disconnect_direct(cfg: ExperimentConfig, u, N: int, K: SiteSet | None = None):
    """Frequency of disconnection of K (default K_N) from the window boundary at level(s) u.

    With a sequence of levels the runs share their randomness (thinning), so
    the estimates are monotone in u sample by sample; a list is returned.
    """
    levels = np.atleast_1d(np.asarray(u, dtype=float))
    d = cfg.tilt.d
    K = K_N(cfg.params(N)) if K is None else K
    n = cfg.replicas
    if np.all(levels == 0):
        out = [_proportion(0, n, cfg.seed, 0.0)]
        return out if np.ndim(u) else out[0]
    geo = _geometry(cfg, d)
    pos = levels > 0
    sampler = InterlacementSampler(geo, levels[pos], K=K)
    res = run_replicas(sampler, n, cfg, "direct", N, tuple(levels))
    out, j = [], 0
    for lv in levels:
        if lv == 0:
            out.append(_proportion(0, n, cfg.seed, 0.0))
            continue
        k = int(res.disconnected[:, j].sum())
        out.append(_proportion(k, n, cfg.seed, _bias(geo, res, j), extra={"u": float(lv), "N": N}))
        j += 1
    return out if np.ndim(u) else out[0]


@dataclass
class TrendTable:
    """Per-N tilted disconnection frequencies with a trend verdict."""

    rows: list
    inconclusive: bool
    flags: list


def disconnect_tilted(cfg: ExperimentConfig, N_list=None) -> TrendTable:
    """Disconnection frequency of K_N under the tilted interlacement, per N.

    The trend is declared inconclusive when some estimate falls more than
    three combined standard errors below its predecessor.
    """
    N_list = list(cfg.N_list if N_list is None else N_list)
    d = cfg.tilt.d
    geo = _geometry(cfg, d)
    rows = []
    for N in N_list:
        p = cfg.params(N)
        if not cfg.window_radius > p.r_Utilde * N:
            raise ValueError(f"window radius must exceed r_Utilde * N = {p.r_Utilde * N:.4g}")
        prof = build_profile(p)
        sampler = InterlacementSampler(geo, [p.u], profile=prof, tilted=True, K=K_N(p))
        res = run_replicas(sampler, cfg.replicas, cfg, "tilted", N)
        k = int(res.disconnected[:, 0].sum())
        rows.append((N, _proportion(k, cfg.replicas, cfg.seed, _bias(geo, res), extra={"u": p.u, "N": N})))
    flags = []
    for (N0, a), (N1, b) in zip(rows, rows[1:]):
        se = math.hypot(a.std_error, b.std_error)
        if b.estimate < a.estimate - 3 * se:
            flags.append(f"decrease from N={N0} to N={N1} beyond 3 s.e.")
    return TrendTable(rows, bool(flags), flags)


def disconnect_is(cfg: ExperimentConfig, u: float | None, N: int) -> EstimatorResult:
    """Importance-sampling estimate of log P_u[A_N] from tilted samples.

    The estimate is log mean(1_A e^{-<omega, F>}); the standard error is by
    the delta method. ``extra`` carries the tilted frequency, the entropy
    H (from ``tilt.entropy``), the entropy lower bound
    log P~[A] - (H + 1/e) / P~[A], the asymptotic target and the effective
    sample size of the weighted indicators.
    """
    p = cfg.params(N, u)
    prof = build_profile(p)
    geo = _geometry(cfg, p.d)
    sampler = InterlacementSampler(geo, [p.u], profile=prof, tilted=True, K=K_N(p))
    res = run_replicas(sampler, cfg.replicas, cfg, "is", N, p.u)
    A = res.disconnected[:, 0]
    w = np.exp(-res.F[:, 0])
    x = A * w
    n = len(x)
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    ess = float(x.sum() ** 2 / (x ** 2).sum()) if mean > 0 else 0.0
    pt = float(A.mean())
    H = entropy(prof)[1]
    bound = math.log(pt) - (H + 1 / math.e) / pt if pt > 0 else float("-inf")
    target = -(1 / p.d) * (math.sqrt(p.u_star2) - math.sqrt(p.u)) ** 2 * brownian_capacity(p.shape, p.d) * N ** (p.d - 2)
    flags = []
    if ess < 30:
        flags.append(f"effective sample size {ess:.1f} < 30: unreliable")
    bias = _bias(geo, res)
    if math.isnan(bias):
        flags.append("escape bias not certified (far-field exterior)")
    if mean > 0:
        est, lse = math.log(mean), se / mean
        ci = (math.log(max(mean - Z95 * se, 1e-300)), math.log(mean + Z95 * se))
    else:
        est, lse, ci = float("-inf"), float("inf"), (float("-inf"), float("-inf"))
        flags.append("no weighted successes")
    extra = {"mean": mean, "mean_se": se, "ci_linear": (mean - Z95 * se, mean + Z95 * se), "tilted_frequency": pt,
             "entropy": H, "entropy_bound": bound, "asymptotic_target": target, "ess": ess,
             "weight_mean": float(w.mean()), "weight_se": float(w.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
             "u": p.u, "N": N}
    return EstimatorResult(est, lse, n, bias, cfg.seed, True, ci, tuple(flags), extra)


# ---------------------------------------------------------------------------
# domination of capacities and equilibrium measures
# ---------------------------------------------------------------------------

def _fence_centres(p: TiltParams, n: int, rng: np.random.Generator) -> np.ndarray:
    G = fence(p)
    reps, _ = symmetry_representatives(G) if p.is_radial else (G.coords, None)
    r = np.linalg.norm(reps, axis=1)
    pick = [int(np.argmin(r)), int(np.argmax(r))]
    rest = [i for i in range(len(reps)) if i not in pick]
    if n > 2 and rest:
        pick += list(rng.choice(rest, size=min(n - 2, len(rest)), replace=False))
    return reps[sorted(set(pick[:max(n, 1)]))]


def _far_field_for(prof: TiltProfile) -> FarField:
    rho = max(prof.support_radius, 1.0) + 3.0
    return FarField(rho, 1.5 * rho + 2.0, prof.d)


def return_probability(prof: TiltProfile | None, x, N: int, exponents, walks: int, n_starts: int, rng,
                       far: FarField | None = None) -> dict:
    """Monte Carlo estimate of max over v in the outer boundary of B4 of P~_v[H_{B3} < infinity].

    Starts: the site of the outer boundary of B4 nearest to the origin, the
    farthest one and random others. ``upper`` is max(p_hat + 3 s.e.).
    """
    B = mesoscopic_sets(x, N, exponents)
    outer4 = boundaries(B["B4"])[0].coords
    r = np.linalg.norm(outer4, axis=1)
    idx = [int(np.argmin(r)), int(np.argmax(r))]
    others = [i for i in range(len(outer4)) if i not in idx]
    if n_starts > 2:
        idx += list(rng.choice(others, size=min(n_starts - 2, len(others)), replace=False))
    starts = outer4[idx]
    if far is None:
        far = _far_field_for(prof) if prof is not None and prof.params is not None else FarField(
            np.linalg.norm(x) + 2 * N ** exponents[3] + 3, 1.5 * (np.linalg.norm(x) + 2 * N ** exponents[3] + 3) + 2)
    pr = prof if prof is not None and prof.params is not None else None
    hits = hitting_counts(starts, pr, B["B3"], walks, rng, far)
    ph = hits / walks
    se = np.sqrt(ph * (1 - ph) / walks)
    j = int(np.argmax(ph))
    return {"starts": starts, "p": ph, "se": se, "beta": float(ph[j]), "beta_se": float(se[j]),
            "upper": float(np.max(ph + 3 * se))}


@dataclass
class DominationRow:
    centre: tuple
    B3_size: int
    cap_B3: float
    occupation_max: float
    beta: float
    beta_upper: float
    tilted_cap_lower: float
    capacity_margin: float
    equilibrium_margin: float
    entrance_ratio: float
    entrance_margin: float
    occupation_residual: float


@dataclass
class DominationReport:
    N: int
    epsilon_prime: float
    rows: list
    tilted_occupation_residual: float
    tilted_check_N: int
    fence_size: int
    notes: list

    @property
    def margins_positive(self) -> bool:
        return all(r.capacity_margin > 0 and r.equilibrium_margin > 0 and r.entrance_margin > 0 for r in self.rows)

    @property
    def occupation_residual(self) -> float:
        vals = [r.occupation_residual for r in self.rows] + [self.tilted_occupation_residual]
        return float(np.nanmax(vals))


def occupation_identity_residual(M: SiteSet, prof: TiltProfile | None = None, tilted: TiltedGreen | None = None) -> float:
    """Relative residual of sum_{v, y in M} e(v) g(v, y) lambda(y) = sum_{y in M} lambda(y).

    Standard version with ``prof`` None (lambda = 1), tilted version
    otherwise (tilted equilibrium measure and Green function).
    """
    if prof is None or prof.params is None:
        eq = equilibrium_and_capacity(M)
        G = free_green(M.d)
        occ = G.occupation(eq.sites.coords, M.coords)
        lhs = float(eq.weights @ occ)
        return abs(lhs - len(M)) / len(M)
    tg = tilted or TiltedGreen(prof)
    eq = tilted_equilibrium_and_capacity(M, prof, tilted=tg)
    g = tg.matrix(eq.sites.coords, M.coords)
    lam = prof.lam(M.coords)
    lhs = float(eq.weights @ g @ lam)
    return abs(lhs - lam.sum()) / lam.sum()


def _tilted_check(cfg: ExperimentConfig, N: int, limit: int = 6000) -> tuple[float, int]:
    """Tilted occupation identity at the largest N' <= N whose tilt support fits the dense solver."""
    # the support radius is about N (r_U + eta); start just above the largest N that can fit
    t = cfg.tilt
    start = min(N, int(((3 * limit / (4 * math.pi)) ** (1 / 3) + 2) / (t.r_U + t.eta)) + 1)
    for Nc in range(start, 0, -1):
        p = cfg.params(Nc)
        prof = build_profile(p, strict=False)
        # skip without materialising the support when its bounding ball is already too large
        if 4.0 / 3.0 * math.pi * max(prof.support_radius - 1.0, 0.0) ** p.d > limit:
            continue
        T = tilt_support(prof)
        if len(T) > limit:
            continue
        x = fence(p).coords[0]
        B3 = mesoscopic_sets(x, Nc, cfg.exponents)["B3"]
        return occupation_identity_residual(B3, prof), Nc
    return float("nan"), 0


def domination_report(cfg: ExperimentConfig, N: int, n_centres: int = 3, walks: int = 1000, n_starts: int = 6,
                      beta_override: float | None = None) -> DominationReport:
    """Capacity, equilibrium-measure and entrance-measure margins at centres of the fence.

    The tilted capacity of B3 is bounded below by
    (u_** + epsilon)/u * |B3| * (1 - beta) / m, with m the largest expected
    time spent in B3 before leaving B4 from the inner boundary of B3
    (exact, killed Green function) and beta the tilted return probability
    from the outer boundary of B4 (Monte Carlo upper value). The tilted
    equilibrium measure of B1 is bounded below by that capacity times the
    smallest killed entrance probability into B1 from the inner boundary
    of B3. With f = 1 both tilted quantities are the standard ones and the
    margins are exact. Margins are reported, not asserted: they are large-N
    statements.
    """
    p = cfg.params(N)
    prof = build_profile(p)
    rng = RngStream(cfg.seed, stream_id("domination", N)).generator
    ustar, eps, u = p.u_star2, p.epsilon, p.u
    eps_p = eps / (4 * ustar + 2 * eps)
    centres = _fence_centres(p, n_centres, rng)
    KNd = K_N_delta(p)
    far = _far_field_for(prof)
    flat = p.plateau == 1.0
    notes = ["finite-N report: the margins are asymptotic statements and are recorded, not asserted"]
    if flat:
        notes.append("f = 1: tilted capacity and equilibrium measure equal the standard ones (exact margins)")
    rows = []
    for x in centres:
        B = mesoscopic_sets(x, N, cfg.exponents)
        clos5 = boundaries(B["B5"])[2]
        if not clos5.issubset(KNd):
            raise ValueError(f"geometry infeasible at N={N}: closure of B5 around {tuple(x)} leaves K_N^delta")
        if np.any(np.abs(prof.f(clos5.coords) - p.plateau) > 1e-9 * p.plateau):
            raise ValueError(f"geometry infeasible at N={N}: f is not constant on the closure of B5")
        B1, B3, B4 = B["B1"], B["B3"], B["B4"]
        eq3 = equilibrium_and_capacity(B3)
        inner3 = eq3.sites
        if len(inner3.intersection(boundaries(B1)[2])):
            raise ValueError(f"geometry infeasible at N={N}: the inner boundary of B3 touches the closure of B1")
        # m = max_y E_y[time in B3 before leaving B4]
        s4 = KilledSolver(B4)
        cols = s4.columns(inner3.coords)
        in3 = B4.index_of(B3.coords)
        m = float(cols[in3].sum(axis=0).max())
        if flat:
            # no tilt: the tilted capacity is cap(B3) itself
            beta = beta_up = float("nan")
            cap_lo = eq3.total
        else:
            if beta_override is None:
                rp = return_probability(prof, x, N, cfg.exponents, walks, n_starts, rng, far)
                beta, beta_up = rp["beta"], rp["upper"]
            else:
                beta = beta_up = float(beta_override)
            cap_lo = (ustar + eps) / u * len(B3) * (1 - beta_up) / m
        cap_margin = u * cap_lo - (ustar + eps / 2) * eq3.total
        # entrance measures into B1: killed in B4 and free
        D = B4.difference(B1)
        sD = KilledSolver(D)
        V = sD.columns(inner3.coords)
        hk = np.zeros((len(B1), len(inner3)))
        for e in np.vstack([np.eye(p.d, dtype=np.int64), -np.eye(p.d, dtype=np.int64)]):
            j = D.index_of(B1.coords + e)
            ok = j >= 0
            hk[ok] += V[j[ok]] / (2 * p.d)
        hf = entrance_matrix(B1, inner3.coords).T
        eq1 = equilibrium_and_capacity(B1)
        zi = B1.index_of(eq1.sites.coords)
        kmin = hk[zi].min(axis=1)
        fmax = hf[zi].max(axis=1)
        ratio = float((kmin / fmax).min())
        if flat:
            eq_margin = float(((u - ustar - eps / 4) * eq1.weights).min())
        else:
            eq_margin = float((u * cap_lo * kmin - (ustar + eps / 4) * eq1.weights).min())
        res = occupation_identity_residual(B3)
        rows.append(DominationRow(tuple(int(c) for c in x), len(B3), eq3.total, m, beta, beta_up, cap_lo, cap_margin,
                                  eq_margin, ratio, ratio - (1 - eps_p), res))
    tres, tN = _tilted_check(cfg, N)
    if tN != N:
        notes.append(f"tilted occupation identity checked at N={tN} (dense solver limit)")
    return DominationReport(N, eps_p, rows, tres, tN, len(fence(p)), notes)


# ---------------------------------------------------------------------------
# occupation and return scans
# ---------------------------------------------------------------------------

@dataclass
class AlphaBetaRow:
    N: int
    alpha: float
    beta: float
    beta_se: float
    beta_simple: float
    beta_simple_se: float


def alpha(N: int, c1: float = 2.0, d: int = 3) -> float:
    """sup over the inner boundary of B(0, N) of |E_x[time in B(0, N)] / (c1 N^2) - 1|.

    Exact sums of the free Green function over one site per cubic symmetry
    class.
    """
    ball = BoxSpec((0,) * d, float(N), "euclidean").sites()
    inner = boundaries(ball)[1]
    reps, _ = symmetry_representatives(inner)
    occ = free_green(d).occupation(reps, ball.coords)
    return float(np.abs(occ / (c1 * N ** 2) - 1).max())


def scan_alpha_beta(cfg: ExperimentConfig, N_list=None, c1: float = 2.0, walks: int = 400, n_starts: int = 4,
                    with_beta: bool = True) -> tuple[list, list]:
    """alpha(N) exactly and the tilted and simple return probabilities beta(N) by Monte Carlo.

    Returns the rows and a list of flags (alpha not strictly decreasing,
    beta not decreasing by 3 s.e.).
    """
    N_list = list(cfg.N_list if N_list is None else N_list)
    d = cfg.tilt.d
    rows = []
    for N in N_list:
        a = alpha(N, c1, d)
        b = bs = bse = bsse = float("nan")
        if with_beta:
            p = cfg.params(N)
            prof = build_profile(p)
            rng = RngStream(cfg.seed, stream_id("beta", N)).generator
            x = _fence_centres(p, 1, rng)[0]
            far = _far_field_for(prof)
            rt = return_probability(prof, x, N, cfg.exponents, walks, n_starts, rng, far)
            rs = return_probability(None, x, N, cfg.exponents, walks, n_starts, rng, far)
            b, bse, bs, bsse = rt["beta"], rt["beta_se"], rs["beta"], rs["beta_se"]
        rows.append(AlphaBetaRow(N, a, b, bse, bs, bsse))
    flags = []
    for r0, r1 in zip(rows, rows[1:]):
        if not r1.alpha < r0.alpha:
            flags.append(f"alpha not strictly decreasing at N={r1.N}")
        if with_beta and not r1.beta < r0.beta - 3 * math.hypot(r0.beta_se, r1.beta_se):
            flags.append(f"beta decrease from N={r0.N} to N={r1.N} inconclusive at 3 s.e.")
    return rows, flags


# ---------------------------------------------------------------------------
# coupling panels
# ---------------------------------------------------------------------------

@dataclass
class PanelEvent:
    name: str
    tilted: float
    tilted_se: float
    standard: float
    standard_se: float

    @property
    def violation(self) -> bool:
        return self.tilted + 3 * self.tilted_se < self.standard


@dataclass
class CouplingReport:
    N: int
    centre: tuple
    comparison_level: float
    events: list
    trace_mean_tilted: float
    trace_mean_tilted_se: float
    trace_mean_standard: float
    trace_mean_standard_se: float

    @property
    def violations(self) -> list:
        return [e.name for e in self.events if e.violation]

    @property
    def trace_dominates(self) -> bool:
        se = math.hypot(self.trace_mean_tilted_se, self.trace_mean_standard_se)
        return self.trace_mean_tilted >= self.trace_mean_standard - 3 * se


def _panel(B1: SiteSet, centre, size: int = 20) -> list:
    """Increasing events on B1: one-point, pair and triple occupations and trace cardinality exceedances."""
    C = B1.coords
    order = np.lexsort((C[:, 2], C[:, 1], C[:, 0], np.abs(C - centre).sum(axis=1)))
    n1 = min(8, len(C))
    ev = [(f"occupied{tuple(int(v) for v in C[i])}", ("all", [int(i)])) for i in order[:n1]]
    far = order[::-1]
    pairs = [(order[0], far[0]), (order[1], far[1]), (far[0], far[2]), (order[0], order[1])]
    for a, b in pairs[:4]:
        if a != b:
            ev.append((f"pair{tuple(int(v) for v in C[a])}{tuple(int(v) for v in C[b])}", ("all", [int(a), int(b)])))
    trip = [(order[0], far[0], far[1]), (far[0], far[1], far[2])]
    for t in trip:
        if len(set(t)) == 3:
            ev.append((f"triple{[tuple(int(v) for v in C[i]) for i in t]}", ("all", [int(i) for i in t])))
    ks = [1, 2, 3, 4, 6, 8, 12, 16]
    for k in ks:
        if len(ev) >= size:
            break
        if k <= len(C):
            ev.append((f"trace>={k}", ("card", k)))
    return ev[:size]


def _event_freq(occ: np.ndarray, ev) -> tuple[float, float]:
    kind, arg = ev
    if kind == "all":
        hit = occ[:, arg].all(axis=1)
    else:
        hit = occ.sum(axis=1) >= arg
    n = len(hit)
    p = float(hit.mean())
    return p, math.sqrt(p * (1 - p) / n)


def coupling_check(cfg: ExperimentConfig, N: int, comparison_level: float | None = None, panel_size: int = 20,
                   samples: int | None = None) -> CouplingReport:
    """Compare increasing events on B1 under tilted samples and standard samples at a lower level.

    The default comparison level is u_** + epsilon/8. A violation is an
    event whose tilted frequency plus 3 s.e. stays below the standard one.
    """
    p = cfg.params(N)
    prof = build_profile(p)
    level = p.u_star2 + p.epsilon / 8 if comparison_level is None else float(comparison_level)
    n = cfg.replicas if samples is None else samples
    rng = RngStream(cfg.seed, stream_id("coupling-centre", N)).generator
    x = _fence_centres(p, 1, rng)[0]
    B1 = mesoscopic_sets(x, N, cfg.exponents)["B1"]
    if p.plateau == 1.0:
        # f = 1: the tilted law is the standard one at level u
        smp_t = InterlacementSampler(WindowGeometry(B1), [p.u], observe=B1)
    else:
        smp_t = InterlacementSampler(enclosing_geometry(prof, traced=B1), [p.u], profile=prof, tilted=True, observe=B1)
    rt = run_replicas(smp_t, n, cfg, "coupling-tilted", N)
    geo_s = WindowGeometry(B1)
    smp_s = InterlacementSampler(geo_s, [level], observe=B1)
    rs = run_replicas(smp_s, n, cfg, "coupling-standard", N, level)
    ot, os_ = rt.occupied(0), rs.occupied(0)
    events = []
    for name, ev in _panel(B1, x, panel_size):
        a, ase = _event_freq(ot, ev)
        b, bse = _event_freq(os_, ev)
        events.append(PanelEvent(name, a, ase, b, bse))
    ct, cs = ot.sum(axis=1), os_.sum(axis=1)
    return CouplingReport(N, tuple(int(c) for c in x), level, events, float(ct.mean()), float(ct.std(ddof=1) / math.sqrt(n)),
                          float(cs.mean()), float(cs.std(ddof=1) / math.sqrt(n)))
