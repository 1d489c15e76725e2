"""Continuous-time simple and tilted random walks on Z^d.

The simple walk jumps at rate 1 to a uniform neighbour. The tilted walk
attached to a profile f jumps from x to x + e at rate f(x+e) / (2d f(x)),
so its total jump rate is 1 - V(x).

All samplers share one compiled core. Stopping conditions are encoded as
bits on a small integer grid, and escape to infinity is handled by an
exterior model:

``ExactShell(W)``
    On reaching the outer boundary of a finite window W the walk returns
    to W with the exact probability P_y[H_W < infinity] and re-enters at a
    site drawn from the exact entrance law h_W(y, .). Nothing is truncated.
``FarField(rho_mid, rho_out)``
    For large Euclidean windows: beyond radius rho_out the walk returns to
    the sphere of radius rho_mid with the Brownian probability
    (rho_mid / |y|)^{d-2} at a point drawn from the exterior Poisson
    kernel. The error is of order 1 / rho_mid.

Both models require f = 1 outside the window, where the tilted walk is the
simple walk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg as sla

from .lattice import SiteSet, boundaries, unit_vectors
from .potential import equilibrium_and_capacity, free_green
from .tilt import MODE_UNIFORM, TiltProfile, f_lookup

HIT, EXITED, ESCAPED, TIME, CAP, OVERFLOW = 0, 1, 2, 3, 4, 5
REASONS = {HIT: "hit_target", EXITED: "exited_domain", ESCAPED: "escape_declared", TIME: "time_reached"}

DOMAIN, TARGET, TRACE, SHELL = 1, 2, 4, 8
MAX_JUMPS = 10 ** 8


class RngStream:
    """Reproducible random stream keyed by (seed, stream_id).

    The generator is a PCG64 seeded from ``SeedSequence(seed,
    spawn_key=(stream_id,))``; distinct stream ids give independent streams.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def _gen(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator


# ---------------------------------------------------------------------------
# geometry and exterior models
# ---------------------------------------------------------------------------

class CodeGrid:
    """Bit grid over a box: DOMAIN, TARGET, TRACE and SHELL flags per site.

    Sites outside the box carry no flags.
    """

    def __init__(self, sets: list[SiteSet], d: int, pad: int = 1):
        pts = [s.coords for s in sets if len(s)]
        if pts:
            allp = np.concatenate(pts)
            lo, hi = allp.min(axis=0) - pad, allp.max(axis=0) + pad
        else:
            lo = hi = np.zeros(d, dtype=np.int64)
        self.origin = lo.astype(np.int64)
        self.shape = (hi - lo + 1).astype(np.int64)
        self.codes = np.zeros(int(np.prod(self.shape)), dtype=np.uint8)
        self.d = d

    @classmethod
    def for_ball(cls, radius: float, d: int) -> "CodeGrid":
        r = int(math.floor(radius))
        box = SiteSet(np.array([[-r] * d, [r] * d]), d=d)
        return cls([box], d, pad=1)

    def flat(self, X) -> np.ndarray:
        rel = np.asarray(X, dtype=np.int64) - self.origin
        if np.any(rel < 0) or np.any(rel >= self.shape):
            raise ValueError("sites outside the code grid")
        return np.ravel_multi_index(tuple(rel.T), tuple(self.shape))

    def mark(self, S: SiteSet, bit: int) -> None:
        if len(S):
            self.codes[self.flat(S.coords)] |= np.uint8(bit)

    def mark_ball(self, radius: float, bit: int) -> None:
        axes = [np.arange(o, o + s) for o, s in zip(self.origin, self.shape)]
        sq = np.zeros(tuple(self.shape), dtype=np.int64)
        for i, a in enumerate(axes):
            sh = [1] * self.d
            sh[i] = -1
            sq = sq + (a ** 2).reshape(sh)
        inside = (sq <= radius ** 2 * (1 + 1e-14)).ravel()
        self.codes[inside] |= np.uint8(bit)

    def sites_with(self, bit: int) -> SiteSet:
        idx = np.nonzero(self.codes & bit)[0]
        return SiteSet(np.column_stack(np.unravel_index(idx, tuple(self.shape))) + self.origin, d=self.d)


class ExactShell:
    """Exact exterior of a finite window W.

    For each y on the outer boundary of W: the return probability
    p(y) = P_y[H_W < infinity] and the cumulative entrance law over the
    inner boundary of W.
    """

    kind = 1

    def __init__(self, W: SiteSet):
        self.W = W
        outer, inner, _ = boundaries(W)
        self.outer, self.inner = outer, inner
        G = free_green(W.d)
        gAA = G.matrix(inner.coords)
        c = sla.cho_factor(gAA, lower=True)
        H = sla.cho_solve(c, G.matrix(inner.coords, outer.coords)).T
        np.clip(H, 0.0, None, out=H)
        self.cum = np.cumsum(H, axis=1)
        self.p_return = self.cum[:, -1].copy()
        if np.any(self.p_return >= 1.0):
            raise ValueError("return probability >= 1 on the window boundary")
        self.rho_mid = self.rho_out = 0.0

    @property
    def capacity(self) -> float:
        return equilibrium_and_capacity(self.W).total

    def args(self, grid: CodeGrid):
        idx = np.full(grid.codes.shape[0], -1, dtype=np.int32)
        idx[grid.flat(self.outer.coords)] = np.arange(len(self.outer), dtype=np.int32)
        grid.mark(self.outer, SHELL)
        return (self.kind, idx, self.p_return, self.cum, self.inner.coords, 0.0, 0.0)


_SHELLS: dict = {}


def exact_shell(W: SiteSet) -> ExactShell:
    """Cached ``ExactShell(W)``; the tables are immutable once built."""
    sh = _SHELLS.get(W)
    if sh is None:
        if len(_SHELLS) > 16:
            _SHELLS.clear()
        sh = _SHELLS[W] = ExactShell(W)
    return sh


class FarField:
    """Approximate exterior of the Euclidean ball of radius rho_mid (centred at 0)."""

    kind = 2

    def __init__(self, rho_mid: float, rho_out: float, d: int = 3):
        if not rho_out > rho_mid + 1:
            raise ValueError("need rho_out > rho_mid + 1")
        self.rho_mid, self.rho_out, self.d = float(rho_mid), float(rho_out), d

    @property
    def capacity(self) -> float:
        """Brownian capacity of the ball in lattice normalisation, rho^{d-2} / (d c0)."""
        from .potential import c0
        return self.rho_mid ** (self.d - 2) / (self.d * c0(self.d))

    def args(self, grid: CodeGrid):
        e = np.zeros(1, dtype=np.int32)
        return (self.kind, e, np.zeros(1), np.zeros((1, 1)), np.zeros((1, self.d), dtype=np.int64), self.rho_mid, self.rho_out)


def _no_exterior(d: int):
    return (0, np.zeros(1, dtype=np.int32), np.zeros(1), np.zeros((1, 1)), np.zeros((1, d), dtype=np.int64), 0.0, 0.0)


# ---------------------------------------------------------------------------
# compiled core
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _sphere_reentry(x, rho, d, rng):
    """Rounded point on the sphere of radius rho drawn from the exterior Poisson kernel seen from x."""
    r2 = 0.0
    for i in range(d):
        r2 += float(x[i]) * float(x[i])
    r = np.sqrt(r2)
    z = np.empty(d)
    while True:
        s = 0.0
        for i in range(d):
            z[i] = rng.standard_normal()
            s += z[i] * z[i]
        s = np.sqrt(s)
        dist2 = 0.0
        for i in range(d):
            z[i] = rho * z[i] / s
            t = z[i] - x[i]
            dist2 += t * t
        ratio = (r - rho) / np.sqrt(dist2)
        if rng.random() < ratio ** d:
            break
    for i in range(d):
        x[i] = np.int64(np.floor(z[i] + 0.5))


@numba.njit(cache=True)
def _walk(x, fmode, ftab, fo, fs, tilted, codes, co, cs, exit_active, t_max, timed,
          ext_kind, sh_idx, sh_p, sh_cum, sh_inner, rho_mid, rho_out, cap, rng,
          record, out_sites, out_hold, out_breaks, occ, level):
    """Run one walk from ``x`` (modified in place).

    Returns (status, sites recorded, breaks recorded, V integral, jumps).
    The V integral covers [0, T) for stopping rules and [0, t_max] for
    fixed-time rules. With ``tilted`` False the walk is simple and the
    profile only enters through V. Sites flagged TRACE get ``occ`` lowered
    to ``level``.
    """
    d = x.shape[0]
    nbf = np.empty(2 * d)
    n = 0
    nb = 0
    vint = 0.0
    t = 0.0
    jumps = 0
    tracing = occ.shape[0] > 1
    rho_out2 = rho_out * rho_out
    while True:
        k = 0
        for i in range(d):
            ci = x[i] - co[i]
            if ci < 0 or ci >= cs[i]:
                k = -1
                break
            k = k * cs[i] + ci
        c = codes[k] if k >= 0 else 0
        if tracing and (c & 4) and occ[k] > level:
            occ[k] = level
        # f at the 2d neighbours (j < 2d) and at x (j = 2d), looked up in place
        q = 1.0
        if fmode != 0:
            tot = 0.0
            fx = 1.0
            for j in range(2 * d + 1):
                if j < 2 * d:
                    x[j // 2] += 1 if j % 2 == 0 else -1
                val = 1.0
                if fmode == 1:
                    m = 0
                    for i in range(d):
                        m += x[i] * x[i]
                    if m < ftab.shape[0]:
                        val = ftab[m]
                else:
                    m = 0
                    for i in range(d):
                        ci = x[i] - fo[i]
                        if ci < 0 or ci >= fs[i]:
                            m = -1
                            break
                        m = m * fs[i] + ci
                    if m >= 0:
                        val = ftab[m]
                if j < 2 * d:
                    x[j // 2] -= 1 if j % 2 == 0 else -1
                    nbf[j] = val
                    tot += val
                else:
                    fx = val
            q = tot / (2 * d * fx)
        if timed:
            hold = rng.exponential() / q if tilted else rng.exponential()
        else:
            hold = 0.0
        status = -1
        if c & 2:
            status = 0
        elif exit_active and not (c & 1):
            status = 1
        elif timed and t_max > 0.0 and t + hold >= t_max:
            hold = t_max - t
            vint += (1.0 - q) * hold
            status = 3
        if record:
            if n >= out_sites.shape[0]:
                return 5, n, nb, vint, jumps
            for i in range(d):
                out_sites[n, i] = x[i]
            out_hold[n] = hold
            n += 1
        if status >= 0:
            return status, n, nb, vint, jumps
        # exterior models
        if ext_kind == 1 and (c & 8):
            j = sh_idx[k]
            p = sh_p[j]
            if rng.random() >= p:
                return 2, n, nb, vint, jumps
            m = np.searchsorted(sh_cum[j], rng.random() * p, side="right")
            if m >= sh_inner.shape[0]:
                m = sh_inner.shape[0] - 1
            for i in range(d):
                x[i] = sh_inner[m, i]
            if record:
                if nb >= out_breaks.shape[0]:
                    return 5, n, nb, vint, jumps
                out_breaks[nb] = n
                nb += 1
            continue
        if ext_kind == 2:
            r2 = 0.0
            for i in range(d):
                r2 += float(x[i]) * float(x[i])
            if r2 > rho_out2:
                p = (rho_mid / np.sqrt(r2)) ** (d - 2)
                if rng.random() >= p:
                    return 2, n, nb, vint, jumps
                _sphere_reentry(x, rho_mid, d, rng)
                if record:
                    if nb >= out_breaks.shape[0]:
                        return 5, n, nb, vint, jumps
                    out_breaks[nb] = n
                    nb += 1
                continue
        vint += (1.0 - q) * hold
        t += hold
        jumps += 1
        if jumps > cap:
            return 4, n, nb, vint, jumps
        # jump
        if fmode == 0 or not tilted:
            j = int(rng.random() * (2 * d))
            if j == 2 * d:
                j -= 1
        else:
            u = rng.random() * tot
            j = 0
            acc = nbf[0]
            while acc < u and j < 2 * d - 1:
                j += 1
                acc += nbf[j]
        x[j // 2] += 1 if j % 2 == 0 else -1


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StopRule:
    """When to stop a walk.

    kind : one of enter, exit, enter_or_exit, escape, time
    target : set whose entrance stops the walk (enter, enter_or_exit)
    domain : set whose exit stops the walk (exit, enter_or_exit)
    window : finite window for escape (exact shell exterior)
    tol : accepted for interface compatibility; the exact shell has no bias
    t : time horizon (time)
    """

    kind: str
    target: SiteSet | None = None
    domain: SiteSet | None = None
    window: SiteSet | None = None
    tol: float | None = None
    t: float | None = None
    exterior: object = None

    @staticmethod
    def enter(A: SiteSet) -> "StopRule":
        return StopRule("enter", target=A)

    @staticmethod
    def exit(U: SiteSet) -> "StopRule":
        return StopRule("exit", domain=U)

    @staticmethod
    def enter_or_exit(A: SiteSet, U: SiteSet) -> "StopRule":
        return StopRule("enter_or_exit", target=A, domain=U)

    @staticmethod
    def escape(W: SiteSet, tol: float = 0.0, target: SiteSet | None = None) -> "StopRule":
        if tol is not None and not 0 <= tol < 1:
            raise ValueError("tolerance must lie in [0, 1)")
        return StopRule("escape", target=target, window=W, tol=tol)

    @staticmethod
    def time(t: float, exterior=None) -> "StopRule":
        if not t > 0:
            raise ValueError("time horizon must be positive")
        return StopRule("time", t=t, exterior=exterior)


@dataclass
class Trajectory:
    """Sites visited with their holding times.

    ``breaks`` lists the indices i where the move from site i-1 to site i
    replaces an elided excursion outside the window (exterior model), so
    consecutive sites are nearest neighbours except across breaks.
    ``holding`` is None for trace-only samples. The last holding time is a
    full exponential clock for stopping rules and is truncated at the
    horizon for time rules; ``integral_to_end`` records which.
    """

    sites: np.ndarray
    holding: np.ndarray | None
    terminal_reason: str
    breaks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    integral_to_end: bool = False

    def __len__(self) -> int:
        return len(self.sites)

    def to_csv(self, path_or_buf) -> None:
        d = self.sites.shape[1]
        own = isinstance(path_or_buf, str)
        fh = open(path_or_buf, "w") if own else path_or_buf
        try:
            fh.write(",".join(["step_index"] + [f"x{i + 1}" for i in range(d)] + ["holding"]) + "\n")
            for i, s in enumerate(self.sites):
                h = "" if self.holding is None else repr(float(self.holding[i]))
                fh.write(",".join([str(i)] + [str(int(c)) for c in s] + [h]) + "\n")
        finally:
            if own:
                fh.close()


def _profile_args(profile, d):
    if profile is None:
        z = np.zeros(d, dtype=np.int64)
        return 0, np.zeros(1), z, z
    return profile.kernel_args


def _setup(stop: StopRule, d: int, extra: list[SiteSet] = ()):
    sets = [s for s in (stop.target, stop.domain, stop.window) if s is not None] + list(extra)
    ext = None
    if stop.kind == "escape":
        ext = exact_shell(stop.window)
        sets.append(ext.outer)
    elif stop.exterior is not None:
        ext = stop.exterior
        if isinstance(ext, ExactShell):
            sets.append(ext.outer)
    grid = CodeGrid(sets, d)
    if stop.target is not None:
        grid.mark(stop.target, TARGET)
    if stop.domain is not None:
        grid.mark(stop.domain, DOMAIN)
    ext_args = ext.args(grid) if ext is not None else _no_exterior(d)
    return grid, ext_args


def sample_walk(start, profile: TiltProfile | None, stop: StopRule, rng, timed: bool = True,
                cap: int = MAX_JUMPS, buffer: int = 4096) -> Trajectory:
    """Sample a simple (``profile`` None or uniform) or tilted walk until the stop rule fires.

    Raises
    ------
    RuntimeError
        If the jump cap is exceeded before the rule fires.
    """
    x0 = np.asarray(start, dtype=np.int64)
    d = len(x0)
    if profile is not None and profile.d != d:
        raise ValueError("profile dimension does not match the start site")
    gen = _gen(rng)
    grid, ext = _setup(stop, d)
    fargs = _profile_args(profile, d)
    t_max = float(stop.t) if stop.kind == "time" else 0.0
    if stop.kind == "time" and not timed:
        raise ValueError("time rules need holding times")
    exit_active = stop.domain is not None
    occ = np.zeros(1, dtype=np.uint8)
    while True:
        state = gen.bit_generator.state
        sites = np.empty((buffer, d), dtype=np.int64)
        hold = np.empty(buffer)
        brk = np.empty(buffer, dtype=np.int64)
        x = x0.copy()
        status, n, nb, _, jumps = _walk(x, *fargs, True, grid.codes, grid.origin, grid.shape, exit_active, t_max, timed,
                                        *ext, cap, gen, True, sites, hold, brk, occ, 0)
        if status != OVERFLOW:
            break
        gen.bit_generator.state = state
        buffer *= 4
    if status == CAP:
        raise RuntimeError(f"walk exceeded the hard cap of {cap} jumps before its stop rule fired")
    return Trajectory(sites[:n].copy(), hold[:n].copy() if timed else None, REASONS[status], brk[:nb].copy(),
                      integral_to_end=(status == TIME))


def potential_integral(traj: Trajectory, profile: TiltProfile | None) -> float:
    """int V(X_s) ds along the trajectory.

    V vanishes outside the tilt support, so starting the integral at time 0
    or at the first entrance into U~_N gives the same value. The final
    holding time is included only for fixed-time trajectories.
    """
    if profile is None or profile.mode == MODE_UNIFORM:
        return 0.0
    if traj.holding is None:
        raise ValueError("trajectory has no holding times")
    n = len(traj) if traj.integral_to_end else len(traj) - 1
    if n <= 0:
        return 0.0
    V = profile.V(traj.sites[:n])
    return math.fsum(V * traj.holding[:n])


def martingale_weight(traj: Trajectory, profile: TiltProfile | None) -> float:
    """(f(X_T) / f(X_0)) exp(int_0^T V(X_s) ds)."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    if profile is None:
        return 1.0
    f = profile.f(traj.sites[[0, -1]])
    return float(f[1] / f[0] * math.exp(potential_integral(traj, profile)))


def psi(profile: TiltProfile | None, x) -> np.ndarray:
    """(1/2d) sum_e [ r log r - (r - 1) ] with r = f(x+e) / f(x); nonnegative."""
    X = np.asarray(x, dtype=np.int64)
    if profile is None:
        return np.zeros(X.shape[:-1])
    d = X.shape[-1]
    fx = profile.f(X)
    out = np.zeros_like(fx)
    for e in unit_vectors(d):
        r = profile.f(X + e) / fx
        out += r * np.log(r) - (r - 1.0)
    return np.maximum(out / (2 * d), 0.0)


@numba.njit(cache=True)
def _first_jumps(x0, fmode, ftab, fo, fs, n, rng, out):
    d = x0.shape[0]
    nbf = np.empty(2 * d)
    x = x0.copy()
    tot = 0.0
    for j in range(2 * d):
        ax = j // 2
        sgn = 1 if j % 2 == 0 else -1
        x[ax] += sgn
        nbf[j] = f_lookup(fmode, ftab, fo, fs, x)
        x[ax] -= sgn
        tot += nbf[j]
    for k in range(n):
        u = rng.random() * tot
        j = 0
        acc = nbf[0]
        while acc < u and j < 2 * d - 1:
            j += 1
            acc += nbf[j]
        out[j] += 1


def jump_counts(profile: TiltProfile | None, x, n: int, rng) -> np.ndarray:
    """Counts of the first jump direction over ``n`` independent walks from x.

    Directions are ordered +e1, -e1, +e2, -e2, ...
    """
    x0 = np.asarray(x, dtype=np.int64)
    d = len(x0)
    if profile is None:
        return _gen(rng).multinomial(n, np.full(2 * d, 1.0 / (2 * d)))
    out = np.zeros(2 * d, dtype=np.int64)
    _first_jumps(x0, *profile.kernel_args, n, _gen(rng), out)
    return out


def jump_probabilities(profile: TiltProfile | None, x) -> np.ndarray:
    """Conditional jump law f(x+e) / sum_e' f(x+e') in the order of ``jump_counts``."""
    x0 = np.asarray(x, dtype=np.int64)
    d = len(x0)
    if profile is None:
        return np.full(2 * d, 1.0 / (2 * d))
    f = profile.f(x0[None] + unit_vectors(d))
    return f / f.sum()


@numba.njit(cache=True)
def _martingale_batch(x0, fmode, ftab, fo, fs, codes, co, cs, t_max, ext_kind, sh_idx, sh_p, sh_cum, sh_inner,
                      rho_mid, rho_out, cap, n, rng, out):
    d = x0.shape[0]
    dummy_s = np.empty((1, d), dtype=np.int64)
    dummy_h = np.empty(1)
    dummy_b = np.empty(1, dtype=np.int64)
    occ = np.zeros(1, dtype=np.uint8)
    f0 = f_lookup(fmode, ftab, fo, fs, x0)
    for k in range(n):
        x = x0.copy()
        status, _, _, vint, _ = _walk(x, fmode, ftab, fo, fs, False, codes, co, cs, False, t_max, True, ext_kind, sh_idx,
                                      sh_p, sh_cum, sh_inner, rho_mid, rho_out, cap, rng, False, dummy_s, dummy_h,
                                      dummy_b, occ, 0)
        if status == 4:
            return k
        out[k] = f_lookup(fmode, ftab, fo, fs, x) / f0 * np.exp(vint)
    return n


def martingale_samples(profile: TiltProfile, x, n: int, rng, t: float | None = None,
                       window: SiteSet | None = None, cap: int = MAX_JUMPS) -> np.ndarray:
    """Samples of M_t (fixed ``t``) or of M_infinity (``t`` None, exact escape from ``window``).

    The walks are simple random walks; M is the exponential martingale of
    the tilt.
    """
    x0 = np.asarray(x, dtype=np.int64)
    d = len(x0)
    if t is None:
        if window is None:
            raise ValueError("M_infinity needs a window containing the tilt support")
        stop = StopRule.escape(window)
    else:
        stop = StopRule.time(t)
    grid, ext = _setup(stop, d)
    out = np.empty(n)
    done = _martingale_batch(x0, *profile.kernel_args, grid.codes, grid.origin, grid.shape,
                             float(t or 0.0), *ext, cap, n, _gen(rng), out)
    if done < n:
        raise RuntimeError(f"walk exceeded the hard cap of {cap} jumps")
    return out


@numba.njit(cache=True)
def _hit_batch(starts, fmode, ftab, fo, fs, tilted, codes, co, cs, ext_kind, sh_idx, sh_p, sh_cum, sh_inner,
               rho_mid, rho_out, cap, n, rng, out):
    d = starts.shape[1]
    dummy_s = np.empty((1, d), dtype=np.int64)
    dummy_h = np.empty(1)
    dummy_b = np.empty(1, dtype=np.int64)
    occ = np.zeros(1, dtype=np.uint8)
    x = np.empty(d, dtype=np.int64)
    for s in range(starts.shape[0]):
        for k in range(n):
            for i in range(d):
                x[i] = starts[s, i]
            status, _, _, _, _ = _walk(x, fmode, ftab, fo, fs, tilted, codes, co, cs, False, 0.0, False, ext_kind,
                                       sh_idx, sh_p, sh_cum, sh_inner, rho_mid, rho_out, cap, rng, False, dummy_s,
                                       dummy_h, dummy_b, occ, 0)
            if status == 4:
                return False
            if status == 0:
                out[s] += 1
    return True


def hitting_counts(starts, profile: TiltProfile | None, target: SiteSet, n: int, rng, exterior,
                   cap: int = MAX_JUMPS) -> np.ndarray:
    """Number of walks, out of ``n`` per start, that ever enter ``target``.

    The walks are tilted when a profile is given. ``exterior`` is an
    ``ExactShell`` or a ``FarField`` that must enclose the tilt support.
    """
    S = np.atleast_2d(np.asarray(starts, dtype=np.int64))
    d = S.shape[1]
    stop = StopRule("enter", target=target, exterior=exterior)
    grid, ext = _setup(stop, d)
    out = np.zeros(len(S), dtype=np.int64)
    ok = _hit_batch(S, *_profile_args(profile, d), profile is not None, grid.codes, grid.origin, grid.shape,
                    *ext, cap, n, _gen(rng), out)
    if not ok:
        raise RuntimeError(f"walk exceeded the hard cap of {cap} jumps")
    return out
