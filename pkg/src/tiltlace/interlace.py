"""Standard and tilted random interlacements seen from a finite window.

Only the forward parts of the trajectories meeting the window are needed:
their number is Poisson(u cap(M)), they start from the normalised
equilibrium measure of M and run as simple (or tilted) walks. The trace on
M is then exactly the interlacement set on M.

Several levels u_1 < ... < u_L are sampled at once by thinning: each
trajectory carries a uniform label on [0, u_L] and belongs to every level
at or above its label, so the traces are increasing in the level.

Two geometries are supported:

``WindowGeometry``
    A finite window M with the exact exterior of the walk module; entries
    follow e_M. Exact, practical up to a few thousand boundary sites.
``BallGeometry``
    A Euclidean ball of radius R (or a chosen subset of it) traced inside a
    larger sphere of radius rho_mid, with the far-field exterior; entries
    are uniform on that sphere and their number uses the Brownian capacity
    of the sphere.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numba
import numpy as np

from .lattice import SiteSet, box, boundaries
from .potential import equilibrium_and_capacity, tilt_support
from .tilt import TiltProfile
from .walk import (TRACE, CodeGrid, exact_shell, FarField, MAX_JUMPS, RngStream, StopRule, _gen, _walk,
                   potential_integral, sample_walk)

REGION, IBND = 16, 32
VACANT = 255


# ---------------------------------------------------------------------------
# geometries
# ---------------------------------------------------------------------------

class WindowGeometry:
    """Finite window M with exact escape; entries from e_M."""

    def __init__(self, M: SiteSet):
        self.M = M
        self.d = M.d
        self.shell = exact_shell(M)
        self.grid = CodeGrid([self.shell.outer, M], self.d)
        self.grid.mark(M, TRACE | REGION)
        _, inner, _ = boundaries(M)
        self.grid.mark(inner, IBND)
        self.ext = self.shell.args(self.grid)
        eq = equilibrium_and_capacity(M)
        self.capacity = eq.total
        self.entry_sites = eq.sites.coords
        self.entry_cum = np.cumsum(eq.weights)
        self.entry_mode = 0
        self.rho_mid = 0.0
        self.bias_per_trajectory = 0.0

    def region(self) -> SiteSet:
        return self.M

    def check_profile(self, profile: TiltProfile | None) -> None:
        if profile is None or profile.params is None:
            return
        T = tilt_support(profile)
        _, inner, _ = boundaries(self.M)
        if not T.issubset(self.M) or len(T.intersection(inner)):
            raise ValueError("the closed tilt support must lie inside the window, off its inner boundary")


def enclosing_geometry(profile: TiltProfile, margin: int = 3, traced: SiteSet | None = None, max_boundary: int = 6000):
    """Smallest convenient geometry containing the tilt support.

    A box window with exact escape when its inner boundary has at most
    ``max_boundary`` sites, a far-field ball otherwise.
    """
    d = profile.d
    rs = max(profile.support_radius, 0.0)
    r = int(math.ceil(rs)) + margin
    if traced is not None:
        r = max(r, int(np.abs(traced.coords).max()) + margin)
    if 2 * d * (2 * r + 1) ** (d - 1) <= max_boundary:
        return WindowGeometry(box((0,) * d, r))
    if traced is not None:
        rs = max(rs, float(np.linalg.norm(traced.coords, axis=1).max()))
    return BallGeometry(math.ceil(rs) + margin, d, traced=traced)


class BallGeometry:
    """Euclidean ball of radius R traced exactly; far-field exterior beyond rho_mid.

    The entrance sphere and the capacity are continuum approximations with
    relative error of order 1 / rho_mid, reported as ``bias_per_trajectory``.
    """

    def __init__(self, R: float, d: int = 3, rho_mid: float | None = None, rho_out: float | None = None,
                 traced: SiteSet | None = None):
        self.R = float(R)
        self.d = d
        self.rho_mid = float(rho_mid if rho_mid is not None else R + 2.0)
        rho_out = float(rho_out if rho_out is not None else 1.5 * self.rho_mid)
        if self.rho_mid < self.R + 1.0:
            raise ValueError("need rho_mid >= R + 1")
        self.far = FarField(self.rho_mid, rho_out, d)
        self.grid = CodeGrid.for_ball(self.R, d)
        self.grid.mark_ball(self.R, REGION)
        self._mark_inner_boundary()
        if traced is None:
            self.grid.codes[(self.grid.codes & REGION) > 0] |= np.uint8(TRACE)
        else:
            if not np.all(self.grid.codes[self.grid.flat(traced.coords)] & REGION):
                raise ValueError("traced sites must lie in the ball")
            self.grid.mark(traced, TRACE)
        self.ext = self.far.args(self.grid)
        self.capacity = self.far.capacity
        self.entry_sites = np.zeros((1, d), dtype=np.int64)
        self.entry_cum = np.ones(1)
        self.entry_mode = 1
        self.bias_per_trajectory = 1.0 / self.rho_mid

    def _mark_inner_boundary(self):
        g = self.grid
        shp = tuple(g.shape)
        inside = (g.codes & REGION).reshape(shp).astype(bool)
        edge = np.zeros_like(inside)
        for ax in range(self.d):
            for sh in (1, -1):
                edge |= inside & ~np.roll(inside, sh, axis=ax)
        g.codes[edge.ravel()] |= np.uint8(IBND)

    def region(self) -> SiteSet:
        return self.grid.sites_with(REGION)

    def check_profile(self, profile: TiltProfile | None) -> None:
        if profile is None or profile.params is None:
            return
        if profile.support_radius + 2.0 > self.R:
            raise ValueError("the tilt support must lie well inside the traced ball")


# ---------------------------------------------------------------------------
# compiled batch kernel
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _sphere_point(rho, d, rng, out):
    s = 0.0
    for i in range(d):
        out[i] = rng.standard_normal()
        s += out[i] * out[i]
    s = np.sqrt(s)
    for i in range(d):
        out[i] = rho * out[i] / s


@numba.njit(cache=True)
def _disconnected(codes, strides, occ, level, Kidx, queue, vis):
    """Whether no path of sites vacant at ``level`` joins K to the window's inner boundary."""
    tail = 0
    found = False
    for k in Kidx:
        if occ[k] > level and vis[k] == 0:
            vis[k] = 1
            queue[tail] = k
            tail += 1
            if codes[k] & 32:
                found = True
    head = 0
    while head < tail and not found:
        k = queue[head]
        head += 1
        for s in strides:
            for kk in (k + s, k - s):
                if vis[kk] == 0 and (codes[kk] & 16) and occ[kk] > level:
                    vis[kk] = 1
                    queue[tail] = kk
                    tail += 1
                    if codes[kk] & 32:
                        found = True
                        break
            if found:
                break
    for i in range(tail):
        vis[queue[i]] = 0
    return not found


@numba.njit(cache=True, nogil=True)
def _batch(n, lam, levels, entry_mode, entry_sites, entry_cum, rho_mid,
           fmode, ftab, fo, fs, tilted, timed,
           codes, co, cs, ext_kind, sh_idx, sh_p, sh_cum, sh_inner, rho_out, cap,
           occ, trace_idx, Kidx, strides, queue, vis, obs_idx, want_disc,
           rng, out_count, out_F, out_disc, out_trace, out_obs, out_jumps):
    d = co.shape[0]
    L = levels.shape[0]
    umax = levels[L - 1]
    x = np.empty(d, dtype=np.int64)
    z = np.empty(d)
    dummy_s = np.empty((1, d), dtype=np.int64)
    dummy_h = np.empty(1)
    dummy_b = np.empty(1, dtype=np.int64)
    hist = np.zeros(256, dtype=np.int64)
    for smp in range(n):
        m = rng.poisson(lam) if lam > 0 else 0
        for l in range(L):
            out_count[smp, l] = 0
            out_F[smp, l] = 0.0
        for t in range(m):
            if entry_mode == 0:
                j = np.searchsorted(entry_cum, rng.random() * entry_cum[-1], side="right")
                if j >= entry_sites.shape[0]:
                    j = entry_sites.shape[0] - 1
                for i in range(d):
                    x[i] = entry_sites[j, i]
            else:
                _sphere_point(rho_mid, d, rng, z)
                for i in range(d):
                    x[i] = np.int64(np.floor(z[i] + 0.5))
            label = rng.random() * umax
            lvl = np.searchsorted(levels, label, side="left")
            if lvl >= L:
                lvl = L - 1
            status, _, _, vint, jumps = _walk(x, fmode, ftab, fo, fs, tilted, codes, co, cs, False, 0.0, timed,
                                              ext_kind, sh_idx, sh_p, sh_cum, sh_inner, rho_mid, rho_out, cap, rng,
                                              False, dummy_s, dummy_h, dummy_b, occ, lvl)
            if status == 4:
                return smp
            out_count[smp, lvl] += 1
            out_F[smp, lvl] += vint
            out_jumps[0] += jumps
        # cumulative over levels
        for l in range(1, L):
            out_count[smp, l] += out_count[smp, l - 1]
            out_F[smp, l] += out_F[smp, l - 1]
        for k in range(obs_idx.shape[0]):
            out_obs[smp, k] = occ[obs_idx[k]]
        if want_disc:
            for l in range(L):
                out_disc[smp, l] = _disconnected(codes, strides, occ, l, Kidx, queue, vis)
        hist[:] = 0
        for k in trace_idx:
            hist[occ[k]] += 1
            occ[k] = 255
        acc = 0
        for l in range(L):
            acc += hist[l]
            out_trace[smp, l] = acc
    return n


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

@dataclass
class BatchResult:
    """Per-sample sufficient statistics of a batch, one column per level."""

    levels: np.ndarray
    count: np.ndarray
    F: np.ndarray
    disconnected: np.ndarray
    trace_size: np.ndarray
    observed: np.ndarray
    jumps: int
    bias_per_trajectory: float
    seed: int | None = None
    stream: int | None = None

    def occupied(self, level_index: int = -1) -> np.ndarray:
        """Boolean (sample, observed site) occupation at a level."""
        L = len(self.levels)
        return self.observed <= (level_index % L)


class InterlacementSampler:
    """Reusable sampler for a geometry, a list of levels and an optional tilt.

    Parameters
    ----------
    geometry : WindowGeometry or BallGeometry
    levels : sequence of float
        Increasing levels sampled jointly by thinning (at most 254).
    profile : TiltProfile, optional
        With ``tilted`` True the walks are tilted walks; in either case the
        potential integrals F are accumulated when a profile is given.
    K : SiteSet, optional
        Set whose disconnection from the window's inner boundary is tested.
    observe : SiteSet, optional
        Sites whose occupation level is reported per sample.
    """

    def __init__(self, geometry, levels, profile: TiltProfile | None = None, tilted: bool = False,
                 K: SiteSet | None = None, observe: SiteSet | None = None, cap: int = MAX_JUMPS):
        levels = np.asarray(levels, dtype=float).ravel()
        if len(levels) == 0 or len(levels) > 254 or np.any(np.diff(levels) <= 0) or levels[0] < 0:
            raise ValueError("levels must be 1 to 254 increasing nonnegative values")
        if tilted and profile is None:
            raise ValueError("tilted sampling needs a profile")
        geometry.check_profile(profile)
        self.geometry = geometry
        self.levels = levels
        self.profile = profile
        self.tilted = bool(tilted)
        self.cap = cap
        g = geometry.grid
        self.occ = np.full(g.codes.shape[0], VACANT, dtype=np.uint8)
        self.trace_idx = np.nonzero(g.codes & TRACE)[0].astype(np.int64)
        strides = np.ones(geometry.d, dtype=np.int64)
        for i in range(geometry.d - 2, -1, -1):
            strides[i] = strides[i + 1] * g.shape[i + 1]
        self.strides = strides
        if K is not None:
            if np.any(g.codes[g.flat(K.coords)] & IBND) or not np.all(g.codes[g.flat(K.coords)] & REGION):
                raise ValueError("K must lie inside the window and off its inner boundary")
            self.Kidx = g.flat(K.coords).astype(np.int64)
            self.queue = np.empty(int((g.codes & REGION).astype(bool).sum()) + 1, dtype=np.int64)
            self.vis = np.zeros(g.codes.shape[0], dtype=np.uint8)
        else:
            self.Kidx = np.zeros(0, dtype=np.int64)
            self.queue = np.zeros(1, dtype=np.int64)
            self.vis = np.zeros(1, dtype=np.uint8)
        self.observe = observe
        self.obs_idx = g.flat(observe.coords).astype(np.int64) if observe is not None else np.zeros(0, dtype=np.int64)
        if observe is not None and not np.all(g.codes[self.obs_idx] & TRACE):
            raise ValueError("observed sites must lie in the traced region")
        if profile is not None:
            self.fargs = profile.kernel_args
        else:
            z = np.zeros(geometry.d, dtype=np.int64)
            self.fargs = (0, np.zeros(1), z, z)

    def clone(self) -> "InterlacementSampler":
        """Copy with fresh work buffers (for concurrent use); the geometry is shared read-only."""
        new = object.__new__(InterlacementSampler)
        new.__dict__.update(self.__dict__)
        new.occ = np.full_like(self.occ, VACANT)
        new.queue = np.empty_like(self.queue)
        new.vis = np.zeros_like(self.vis)
        return new

    @property
    def intensity(self) -> float:
        """Mean number of trajectories at the top level."""
        return float(self.levels[-1] * self.geometry.capacity)

    def run(self, n: int, rng, timed: bool | None = None) -> BatchResult:
        """Draw ``n`` independent samples and return their statistics."""
        gen = _gen(rng)
        L = len(self.levels)
        if timed is None:
            timed = self.profile is not None
        g = self.geometry.grid
        count = np.zeros((n, L), dtype=np.int64)
        F = np.zeros((n, L))
        disc = np.zeros((n, L), dtype=np.bool_)
        trace = np.zeros((n, L), dtype=np.int64)
        obs = np.zeros((n, len(self.obs_idx)), dtype=np.uint8)
        jumps = np.zeros(1, dtype=np.int64)
        geo = self.geometry
        ext = geo.ext
        done = _batch(n, self.intensity, self.levels, geo.entry_mode, geo.entry_sites, geo.entry_cum, geo.rho_mid,
                      *self.fargs, self.tilted, bool(timed), g.codes, g.origin, g.shape,
                      ext[0], ext[1], ext[2], ext[3], ext[4], ext[6], self.cap,
                      self.occ, self.trace_idx, self.Kidx, self.strides, self.queue, self.vis, self.obs_idx,
                      len(self.Kidx) > 0, gen, count, F, disc, trace, obs, jumps)
        if done < n:
            self.occ[:] = VACANT
            raise RuntimeError(f"a trajectory exceeded the hard cap of {self.cap} jumps")
        seed = stream = None
        if isinstance(rng, RngStream):
            seed, stream = rng.seed, rng.stream_id
        return BatchResult(self.levels, count, F, disc, trace, obs, int(jumps[0]), geo.bias_per_trajectory, seed, stream)


@dataclass
class InterlacementSample:
    """One realisation restricted to a window.

    ``trajectories`` holds the forward paths from their entrance into the
    window (with holding times when requested). ``F`` is the per-trajectory
    integral of V, so the change-of-measure exponent is F.sum().
    """

    window: SiteSet
    level: float
    flavor: str
    trajectories: list
    trace: SiteSet
    count: int
    escape_tol: float
    F: np.ndarray
    seed: int | None = None
    stream: int | None = None

    def summary(self, weight: float | None = None) -> dict:
        return {"seed": self.seed, "stream": self.stream, "count": self.count, "trace_size": len(self.trace),
                "weight": weight, "bias_bound": self.count * self.escape_tol}

    def to_json(self, weight: float | None = None) -> str:
        return json.dumps(self.summary(weight), sort_keys=True)


_WINDOWS: dict = {}


def _window_geometry(M: SiteSet) -> WindowGeometry:
    # the exterior tables are the expensive part; reuse them across samples
    geo = _WINDOWS.get(M)
    if geo is None:
        if len(_WINDOWS) > 16:
            _WINDOWS.clear()
        geo = _WINDOWS[M] = WindowGeometry(M)
    return geo


def _sample_paths(M: SiteSet, u: float, rng, profile, tilted, escape_tol, timed) -> InterlacementSample:
    if u < 0:
        raise ValueError("level must be nonnegative")
    gen = _gen(rng)
    geo = _window_geometry(M)
    geo.check_profile(profile)
    m = int(gen.poisson(u * geo.capacity)) if u > 0 else 0
    stop = StopRule.escape(M, escape_tol)
    trajs, F, visited = [], np.zeros(m), []
    for t in range(m):
        j = int(np.searchsorted(geo.entry_cum, gen.random() * geo.entry_cum[-1], side="right"))
        j = min(j, len(geo.entry_sites) - 1)
        tr = sample_walk(geo.entry_sites[j], profile if tilted else None, stop, gen, timed=timed)
        if profile is not None and timed:
            F[t] = potential_integral(tr, profile)
        trajs.append(tr)
        visited.append(tr.sites)
    pts = np.concatenate(visited) if visited else np.zeros((0, M.d), dtype=np.int64)
    trace = SiteSet(pts[M.contains(pts)], d=M.d) if len(pts) else SiteSet(pts, d=M.d)
    seed = stream = None
    if isinstance(rng, RngStream):
        seed, stream = rng.seed, rng.stream_id
    return InterlacementSample(M, u, "tilted" if tilted else "standard", trajs, trace, m, 0.0, F, seed, stream)


def sample_interlacement(M: SiteSet, u: float, rng, escape_tol: float = 0.0, profile: TiltProfile | None = None,
                         timed: bool = True) -> InterlacementSample:
    """Interlacement at level u seen from the finite set M.

    The walks escape through the exact exterior, so the truncation bias is
    zero whatever ``escape_tol``. With a profile, F is accumulated along
    the simple walks (for the weight e^{<omega, F>}).
    """
    return _sample_paths(M, u, rng, profile, False, escape_tol, timed)


def sample_tilted_interlacement(M: SiteSet, profile: TiltProfile, rng, escape_tol: float = 0.0,
                                timed: bool = True) -> InterlacementSample:
    """Tilted interlacement at level profile.params.u seen from M.

    M must contain the closed tilt support away from its inner boundary;
    then the tilted equilibrium measure of M coincides with e_M and the
    entrance cloud is Poisson with intensity u P~_{e_M}.
    """
    return _sample_paths(M, profile.params.u, rng, profile, True, escape_tol, timed)


def vacant(sample: InterlacementSample, region: SiteSet) -> SiteSet:
    """region minus the trace."""
    if not region.issubset(sample.window):
        raise ValueError("region must lie in the window")
    return region.difference(sample.trace)


def importance_weight(sample: InterlacementSample, profile: TiltProfile | None = None) -> float:
    """e^{-<omega, F>} for tilted samples, e^{+<omega, F>} for standard ones."""
    if profile is None or profile.params is None:
        return 1.0
    if any(t.holding is None for t in sample.trajectories):
        raise ValueError("importance weights need holding times")
    s = math.fsum(sample.F)
    return math.exp(-s) if sample.flavor == "tilted" else math.exp(s)
