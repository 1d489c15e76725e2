"""Tilt profiles built from the mollified equilibrium potential.

The continuum potential h(z) = W_z[H_{K^{2 delta}} < T_U] is smoothed by a
polynomial bump of radius eta, rescaled to the lattice as
h_N(x) = h^eta(x / N), and turned into

    f = (plateau - 1) h_N + 1,   V = -Delta f / f,   lambda = f^2,

with plateau = sqrt((u_** + epsilon) / u). The module also evaluates the
relative entropy of the tilted interlacement both as -u sum f Delta f and
through the Dirichlet form of h_N, and scans E(h_N, h_N) / N^{d-2} in N.

Two evaluation paths exist. Balls and points centred at the origin use an
exact radial representation: h^eta is computed from spherical means of the
piecewise closed-form h and tabulated by n = |x|^2. Other bodies go through
a finite-difference Dirichlet solve on a continuum grid followed by a
discrete convolution.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.ndimage import map_coordinates
from scipy.signal import fftconvolve
from scipy.special import beta as beta_fn

from .lattice import BoxSpec, ShapeSpec, SiteSet, blow_up, boundaries, unit_vectors
from .potential import c0

log = logging.getLogger(__name__)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TiltParams:
    """Parameters of the tilt.

    Attributes
    ----------
    u : float
        Interlacement level.
    u_star2 : float
        The critical level u_** (user supplied, no default).
    epsilon : float
        Excess over u_**; the tilted walk behaves like level u_** + epsilon
        on the plateau.
    delta, eta : float
        Fattening of K and mollifier radius, 0 < eta < delta < 1.
    r_U : float
        Radius of the ball U on which h is the relative equilibrium potential.
    shape : ShapeSpec or tuple of ShapeSpec
        The body K.
    N : int
        Lattice scale.
    resolution : float, optional
        Grid spacing of the continuum solver for non-radial bodies
        (default min(eta/4, delta/8)).
    """

    u: float
    u_star2: float
    epsilon: float
    delta: float
    eta: float
    r_U: float
    shape: ShapeSpec | tuple
    N: int
    resolution: float | None = None

    def __post_init__(self):
        if not isinstance(self.shape, ShapeSpec):
            object.__setattr__(self, "shape", tuple(self.shape))
        if not self.u > 0:
            raise ValueError("invariant u > 0 violated")
        if not self.u_star2 > 0:
            raise ValueError("invariant u_** > 0 violated")
        if not self.epsilon > 0:
            raise ValueError("invariant epsilon > 0 violated")
        if not self.u <= self.u_star2 + self.epsilon:
            raise ValueError("invariant u < u_** + epsilon violated (the tilt must raise the level)")
        if not 0 < self.delta < 1:
            raise ValueError("invariant 0 < delta < 1 violated")
        if not 0 < self.eta < self.delta:
            raise ValueError("invariant 0 < eta < delta violated")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("invariant N >= 1 (integer) violated")
        object.__setattr__(self, "N", int(self.N))
        for s in self.shapes:
            if s.d != self.d:
                raise ValueError("dimension mismatch between shapes")
            reach = float(np.linalg.norm(s.center)) + s.outer_radius + 2 * self.delta
            if not reach < self.r_U:
                raise ValueError(
                    f"invariant K^(2 delta) inside U = ball(r_U) violated: K^(2 delta) reaches {reach:.4g} >= r_U = {self.r_U:.4g}")
        if self.d < 3:
            raise ValueError("invariant d >= 3 violated")

    @property
    def shapes(self) -> tuple:
        return (self.shape,) if isinstance(self.shape, ShapeSpec) else self.shape

    @property
    def d(self) -> int:
        return self.shapes[0].d

    @property
    def r_Utilde(self) -> float:
        return self.r_U + 4.0

    @property
    def plateau(self) -> float:
        return math.sqrt((self.u_star2 + self.epsilon) / self.u)

    @property
    def entropy_factor(self) -> float:
        """(sqrt(u_** + epsilon) - sqrt(u))^2."""
        return (math.sqrt(self.u_star2 + self.epsilon) - math.sqrt(self.u)) ** 2

    @property
    def is_radial(self) -> bool:
        """Single ball or point centred at the origin: h is a closed-form radial function."""
        s = self.shapes
        return len(s) == 1 and s[0].kind in ("ball", "point") and not np.any(s[0].center)

    @property
    def inner_radius(self) -> float:
        """Radius a of K^{2 delta} for radial bodies."""
        return self.shapes[0].size + 2 * self.delta

    @property
    def grid_spacing(self) -> float:
        return self.resolution or min(self.eta / 4, self.delta / 8)

    def with_N(self, N: int) -> "TiltParams":
        return replace(self, N=N)


# ---------------------------------------------------------------------------
# continuum potentials
# ---------------------------------------------------------------------------

def relative_capacity(a: float, R: float, d: int = 3) -> float:
    """Brownian capacity of the ball B(0, a) relative to B(0, R).

    Normalised so that E(h) = (1/2) int |grad h|^2; in d = 3 this is
    2 pi / (1/a - 1/R).
    """
    if not 0 < a < R:
        raise ValueError("need 0 < a < R")
    return 1.0 / ((a ** (2 - d) - R ** (2 - d)) * c0(d))


def _radial_h(r, a, R, d):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        v = (r ** (2 - d) - R ** (2 - d)) / (a ** (2 - d) - R ** (2 - d))
    return np.clip(np.where(r <= a, 1.0, v), 0.0, 1.0)


def _radial_F(t, a, R):
    """Antiderivative F(t) = int_0^t h(s) s ds of the d = 3 annulus potential."""
    t = np.minimum(np.asarray(t, dtype=float), R)
    A = 1.0 / (1.0 / a - 1.0 / R)
    inner = 0.5 * t ** 2
    outer = 0.5 * a ** 2 + A * ((t - a) - (t ** 2 - a ** 2) / (2 * R))
    return np.where(t <= a, inner, outer)


class GridPotential:
    """Finite-difference equilibrium potential of K^{2 delta} relative to U.

    Solves the 2d+1 point Laplace equation on a cubic grid of spacing
    ``params.grid_spacing`` with h = 1 on K^{2 delta} and h = 0 off U.
    """

    def __init__(self, params: TiltParams):
        self.params = params
        d, hs = params.d, params.grid_spacing
        L = params.r_U + params.eta + 2 * hs
        n = int(math.ceil(L / hs))
        self.spacing = hs
        self.lo = -n * hs
        ax = self.lo + hs * np.arange(2 * n + 1)
        pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)
        shape = pts.shape[:-1]
        dist = np.min([s.distance(pts) for s in params.shapes], axis=0)
        one = dist <= 2 * params.delta
        zero = np.sqrt((pts ** 2).sum(axis=-1)) >= params.r_U
        del pts
        free = ~(one | zero)
        h = one.astype(float)
        idx = -np.ones(shape, dtype=np.int64)
        idx[free] = np.arange(free.sum())
        m = int(free.sum())
        rows, cols, vals = [np.arange(m)], [np.arange(m)], [np.full(m, 2.0 * d)]
        rhs = np.zeros(m)
        fi = np.nonzero(free)
        for ax_ in range(d):
            for sh in (-1, 1):
                nb = list(fi)
                nb[ax_] = fi[ax_] + sh
                nb = tuple(nb)
                j = idx[nb]
                ok = j >= 0
                rows.append(np.nonzero(ok)[0])
                cols.append(j[ok])
                vals.append(-np.ones(ok.sum()))
                rhs += h[nb] * (~ok)
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
        sol, info = spla.cg(A, rhs, rtol=1e-11, atol=0.0, maxiter=20 * (2 * n + 1) * d)
        if info != 0:
            raise RuntimeError(f"continuum potential solve did not converge (info={info})")
        h[free] = sol
        self.values = np.clip(h, 0.0, 1.0)
        self.mollified = None

    def _interp(self, grid, z):
        z = np.asarray(z, dtype=float)
        c = (z - self.lo) / self.spacing
        out = map_coordinates(grid, np.moveaxis(c, -1, 0).reshape(z.shape[-1], -1), order=1, mode="constant", cval=0.0)
        return out.reshape(z.shape[:-1])

    def __call__(self, z) -> np.ndarray:
        return self._interp(self.values, z)

    def mollify(self) -> "GridPotential":
        """Discrete convolution with the bump sampled on the grid."""
        p = self.params
        k = int(math.floor(p.eta / self.spacing))
        ax = self.spacing * np.arange(-k, k + 1)
        w = np.stack(np.meshgrid(*([ax] * p.d), indexing="ij"), axis=-1)
        phi = np.clip(1.0 - (w ** 2).sum(axis=-1) / p.eta ** 2, 0.0, None) ** 4
        phi /= phi.sum()
        self.mollified = np.clip(fftconvolve(self.values, phi, mode="same"), 0.0, 1.0)
        return self

    def smooth(self, z) -> np.ndarray:
        if self.mollified is None:
            self.mollify()
        return self._interp(self.mollified, z)


def equilibrium_potential(params: TiltParams, z) -> np.ndarray:
    """h(z): probability that Brownian motion from z hits K^{2 delta} before leaving U.

    Closed form for balls and points at the origin, finite differences
    otherwise (resolution ``params.grid_spacing``).
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != params.d:
        raise ValueError("dimension mismatch")
    if params.is_radial:
        return _radial_h(np.sqrt((z ** 2).sum(axis=-1)), params.inner_radius, params.r_U, params.d)
    return GridPotential(params)(z)


def bump_mass(d: int) -> float:
    """int_{|w| <= 1} (1 - |w|^2)^4 dw."""
    sphere = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    return sphere * 0.5 * beta_fn(d / 2, 5)


class MollifiedPotential:
    """h^eta = h * phi^eta with phi^eta proportional to (1 - |w/eta|^2)^4.

    ``method="exact"`` (radial bodies, d = 3) integrates spherical means of
    the closed-form h against the radial bump with Gauss-Legendre rules
    split at the kinks, which is exact up to rounding because the
    integrand is piecewise polynomial. ``method="quadrature"`` uses a
    midpoint rule with cells of side eta/8 on any callable h.
    """

    def __init__(self, params: TiltParams, method: str | None = None, h=None):
        self.params = params
        d = params.d
        if method is None:
            method = "exact" if (params.is_radial and d == 3 and h is None) else "quadrature"
        if method == "exact" and not (params.is_radial and d == 3):
            raise ValueError("exact mollification needs a radial body in d = 3")
        self.method = method
        self.h = h if h is not None else (lambda z: equilibrium_potential(params, z))
        if method == "quadrature":
            eta = params.eta
            step = eta / 8
            ax = -eta + step * (np.arange(16) + 0.5)
            w = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
            phi = np.clip(1.0 - (w ** 2).sum(axis=-1) / eta ** 2, 0.0, None) ** 4
            keep = phi > 0
            self.nodes = w[keep]
            raw = phi[keep] * step ** d / (bump_mass(d) * eta ** d)
            self.raw_mass = float(raw.sum())
            self.weights = raw / raw.sum()
            if abs(self.weights.sum() - 1.0) > 1e-6:
                raise ValueError("mollifier quadrature is not normalised to 1e-6")

    def radial(self, r) -> np.ndarray:
        """h^eta at radii ``r`` (exact method only)."""
        p = self.params
        a, R, eta = p.inner_radius, p.r_U, p.eta
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = _radial_h(r, a, R, 3)
        band = (np.abs(r - a) < eta) | (np.abs(r - R) < eta)
        if band.any():
            out[band] = _exact_radial_mollify(r[band], a, R, eta)
        return np.clip(out, 0.0, 1.0)

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.method == "exact":
            return self.radial(np.sqrt((z ** 2).sum(axis=-1))).reshape(z.shape[:-1])
        flat = z.reshape(-1, z.shape[-1])
        out = np.empty(len(flat))
        for lo in range(0, len(flat), 256):
            blk = flat[lo:lo + 256]
            vals = self.h(blk[:, None, :] - self.nodes[None, :, :])
            out[lo:lo + 256] = vals @ self.weights
        return np.clip(out, 0.0, 1.0).reshape(z.shape[:-1])


def _exact_radial_mollify(r, a, R, eta):
    """Exact h^eta(r) in d = 3 away from r = 0.

    With F the antiderivative of h(t) t, the spherical mean of h over the
    sphere of radius s around a point at distance r from the origin is
    (F(r + s) - F(|r - s|)) / (2 r s). Radial bump density:
    rho(s) = 4 pi s^2 (1 - s^2/eta^2)^4 / (eta^3 Z).
    """
    Z = bump_mass(3) * eta ** 3
    cand = np.stack([a - r, r - a, r + a, R - r, r - R, r], axis=1)
    cuts = np.sort(np.clip(cand, 0.0, eta), axis=1)
    edges = np.concatenate([np.zeros((len(r), 1)), cuts, np.full((len(r), 1), eta)], axis=1)
    total = np.zeros(len(r))
    for k in range(edges.shape[1] - 1):
        lo, hi = edges[:, k:k + 1], edges[:, k + 1:k + 2]
        half = 0.5 * (hi - lo)
        s = lo + half * (1.0 + _GL_NODES[None, :])
        dens = 4 * np.pi * s ** 2 * (1.0 - (s / eta) ** 2) ** 4 / Z
        rr = r[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = (_radial_F(rr + s, a, R) - _radial_F(np.abs(rr - s), a, R)) / (2 * rr * s)
        piece = (half * (dens * np.where(half > 0, mean, 0.0)) @ _GL_WEIGHTS[:, None]).ravel()
        total += piece
    return total


def mollify(params: TiltParams, method: str | None = None) -> MollifiedPotential:
    """The mollified potential h^eta as a callable on continuum points."""
    if params.is_radial:
        return MollifiedPotential(params, method)
    gp = GridPotential(params).mollify()
    mp = MollifiedPotential(params, "quadrature", h=gp)
    mp.grid = gp
    return mp


def mollified_energy(params: TiltParams, step: float = 1e-5) -> float:
    """(1/2d) int |grad h^eta|^2 for radial bodies in d = 3.

    This is the N -> infinity limit of E(h_N, h_N) / N at fixed eta. Outside
    the kink bands the derivative is the closed-form one; inside them it is
    differentiated numerically from the exact radial values.
    """
    if not (params.is_radial and params.d == 3):
        raise ValueError("radial bodies in d = 3 only")
    a, R, eta = params.inner_radius, params.r_U, params.eta
    A = 1.0 / (1.0 / a - 1.0 / R)
    m = MollifiedPotential(params, "exact")
    total = 0.0
    lo_b, hi_b = [max(a - eta, 0.0), R - eta], [a + eta, R + eta]
    if a + eta >= R - eta:
        lo_b, hi_b = [a - eta], [R + eta]
    for lo, hi in zip(lo_b, hi_b):
        n = int(math.ceil((hi - lo) / step)) | 1
        r = np.linspace(lo, hi, n)
        dh = np.gradient(m.radial(r), r, edge_order=2)
        y = dh ** 2 * r ** 2
        total += float(np.sum((y[:-1] + y[1:]) * np.diff(r)) / 2)
    # harmonic stretch between the bands: h' = -A / r^2
    if a + eta < R - eta:
        total += A ** 2 * (1.0 / (a + eta) - 1.0 / (R - eta))
    return 4 * math.pi * total / (2 * 3)


# ---------------------------------------------------------------------------
# lattice profile
# ---------------------------------------------------------------------------

MODE_UNIFORM, MODE_RADIAL, MODE_GRID = 0, 1, 2


@numba.njit(inline="always")
def f_lookup(mode, tab, origin, shape, x):
    """f at an integer site for the three profile layouts."""
    if mode == MODE_RADIAL:
        n = 0
        for i in range(x.shape[0]):
            n += x[i] * x[i]
        if n < tab.shape[0]:
            return tab[n]
        return 1.0
    if mode == MODE_GRID:
        k = 0
        for i in range(x.shape[0]):
            c = x[i] - origin[i]
            if c < 0 or c >= shape[i]:
                return 1.0
            k = k * shape[i] + c
        return tab[k]
    return 1.0


@numba.njit(cache=True)
def _f_many(mode, tab, origin, shape, X, out):
    for i in range(X.shape[0]):
        out[i] = f_lookup(mode, tab, origin, shape, X[i])


@dataclass
class TiltProfile:
    """Lattice tilt f, V = -Delta f / f and lambda = f^2.

    Values are evaluated lazily from a table (radial bodies, indexed by
    |x|^2) or a dense grid over the support box, so profiles at large N do
    not materialise the whole window.

    Attributes
    ----------
    params : TiltParams or None
        None for the uniform profile f = 1.
    mode : int
        MODE_UNIFORM, MODE_RADIAL or MODE_GRID.
    h_table : ndarray
        h_N by |x|^2 (radial) or flattened over the grid box (grid).
    origin, shape : ndarray
        Grid box placement (grid mode).
    plateau_violation : tuple or None
        A site of K_N^delta where f misses the plateau, when the build was
        not strict.
    """

    params: TiltParams | None
    d: int
    mode: int
    h_table: np.ndarray
    origin: np.ndarray
    shape: np.ndarray
    plateau_violation: tuple | None = None
    _f_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._f_table = 1.0 + (self.plateau - 1.0) * self.h_table

    @classmethod
    def uniform(cls, d: int = 3) -> "TiltProfile":
        z = np.zeros(d, dtype=np.int64)
        return cls(None, d, MODE_UNIFORM, np.zeros(1), z, z.copy())

    @property
    def plateau(self) -> float:
        return 1.0 if self.params is None else self.params.plateau

    @property
    def N(self) -> int | None:
        return None if self.params is None else self.params.N

    @property
    def kernel_args(self):
        """(mode, f table, origin, shape) for the compiled samplers."""
        return self.mode, self._f_table, self.origin, self.shape

    def h(self, points) -> np.ndarray:
        X = np.ascontiguousarray(points, dtype=np.int64).reshape(-1, self.d)
        out = np.empty(len(X))
        _f_many(self.mode, self.h_table, self.origin, self.shape, X, out)
        if self.mode != MODE_UNIFORM:
            # lookups default to 1 off the table, h defaults to 0
            out[~self._in_table(X)] = 0.0
        else:
            out[:] = 0.0
        return out.reshape(np.shape(points)[:-1])

    def _in_table(self, X):
        if self.mode == MODE_RADIAL:
            return (X ** 2).sum(axis=1) < len(self.h_table)
        rel = X - self.origin
        return np.all((rel >= 0) & (rel < self.shape), axis=1)

    def f(self, points) -> np.ndarray:
        X = np.ascontiguousarray(points, dtype=np.int64).reshape(-1, self.d)
        out = np.empty(len(X))
        _f_many(self.mode, self._f_table, self.origin, self.shape, X, out)
        return out.reshape(np.shape(points)[:-1])

    def lam(self, points) -> np.ndarray:
        return self.f(points) ** 2

    def V(self, points) -> np.ndarray:
        """V(x) = 1 - sum_e f(x+e) / (2d f(x)), the negative relative Laplacian of f."""
        X = np.asarray(points, dtype=np.int64)
        fx = self.f(X)
        acc = np.zeros_like(fx)
        for e in unit_vectors(self.d):
            acc += self.f(X + e)
        return 1.0 - acc / (2 * self.d * fx)

    @property
    def support_radius(self) -> float:
        """Euclidean radius containing every site where f != 1."""
        if self.mode == MODE_UNIFORM:
            return -1.0
        if self.mode == MODE_RADIAL:
            nz = np.nonzero(self.h_table > 0)[0]
            return math.sqrt(nz[-1]) if len(nz) else -1.0
        grid = self.h_table.reshape(tuple(self.shape))
        idx = np.argwhere(grid > 0) + self.origin
        return float(np.sqrt((idx ** 2).sum(axis=1)).max()) if len(idx) else -1.0

    def support(self) -> SiteSet:
        """Sites where f != 1."""
        if self.mode == MODE_UNIFORM or self.support_radius < 0:
            return SiteSet(np.zeros((0, self.d), dtype=np.int64), d=self.d)
        if self.mode == MODE_RADIAL:
            R = self.support_radius
            ball = BoxSpec((0,) * self.d, max(R, 1.0), "euclidean").sites()
            return SiteSet(ball.coords[self.h(ball.coords) > 0], d=self.d)
        grid = self.h_table.reshape(tuple(self.shape))
        return SiteSet(np.argwhere(grid > 0) + self.origin, d=self.d)

    def window(self) -> SiteSet:
        """Closure of the blow-up of U~ = B(0, r_U + 4)."""
        if self.params is None:
            raise ValueError("the uniform profile has no window")
        return boundaries(U_tilde_N(self.params))[2]

    def to_csv(self, path_or_buf, sites: SiteSet | None = None, header: str | None = None) -> None:
        """Write site coordinates with f, V and lambda (defaults to the support closure)."""
        if sites is None:
            sites = boundaries(self.support())[2]
        X = sites.coords
        cols = np.column_stack([X.astype(float), self.f(X), self.V(X), self.lam(X)])
        names = [f"x{i + 1}" for i in range(self.d)] + ["f", "V_per_time", "lambda"]
        own = isinstance(path_or_buf, str)
        fh = open(path_or_buf, "w") if own else path_or_buf
        try:
            if header:
                fh.write(f"# {header}\n")
            fh.write(",".join(names) + "\n")
            for row in cols:
                fh.write(",".join([str(int(v)) for v in row[:self.d]] + [repr(float(v)) for v in row[self.d:]]) + "\n")
        finally:
            if own:
                fh.close()


def _radial_table(params: TiltParams) -> np.ndarray:
    N = params.N
    m = MollifiedPotential(params, "exact")
    nmax = int(math.floor((N * (params.r_U + params.eta)) ** 2)) + 1
    n = np.arange(nmax + 1)
    H = m.radial(np.sqrt(n) / N)
    H[-1] = 0.0
    return H


def build_profile(params: TiltParams, strict: bool = True) -> TiltProfile:
    """Tabulate h_N and f for the given parameters and check the invariants.

    Raises
    ------
    ValueError
        If f differs from 1 within reach of the inner boundary of U~_N, or
        (when ``strict``) if f misses the plateau on K_N^delta; the message
        names the violating site.
    """
    d, N = params.d, params.N
    if params.is_radial and d == 3:
        H = _radial_table(params)
        z = np.zeros(d, dtype=np.int64)
        prof = TiltProfile(params, d, MODE_RADIAL, H, z, z.copy())
    else:
        mp = mollify(params)
        reach = int(math.ceil(N * (params.r_U + params.eta))) + 1
        ax = np.arange(-reach, reach + 1)
        pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)
        vals = mp(pts / N) if params.is_radial else mp.grid.smooth(pts / N)
        origin = np.full(d, -reach, dtype=np.int64)
        shape = np.full(d, 2 * reach + 1, dtype=np.int64)
        prof = TiltProfile(params, d, MODE_GRID, np.ascontiguousarray(vals).ravel(), origin, shape)
    _check_profile(prof, strict)
    return prof


def _check_profile(prof: TiltProfile, strict: bool) -> None:
    p = prof.params
    N, d = p.N, p.d
    # every site within sqrt(d) + 2 of the sphere of radius N r_U~ is
    # in the closure of the inner boundary of U~_N or outside U~_N
    limit = N * p.r_Utilde - math.sqrt(d) - 2.0
    R = prof.support_radius
    if R >= limit:
        raise ValueError(f"invariant f = 1 near the inner boundary of U~_N violated at radius {R:.3f}")
    plateau = p.plateau
    if plateau == 1.0:
        return
    Kd = None
    if p.is_radial:
        outer = N * (p.inner_radius - 2 * p.delta + p.delta) + math.sqrt(d)
        if outer <= N * (p.inner_radius - p.eta):
            return
    Kd = K_N_delta(p)
    fv = prof.f(Kd.coords)
    bad = np.nonzero(np.abs(fv - plateau) > 1e-9 * plateau)[0]
    if len(bad):
        site = tuple(int(c) for c in Kd.coords[bad[0]])
        msg = f"invariant f = plateau on K_N^delta violated at site {site} (f = {fv[bad[0]]:.12g}, plateau {plateau:.12g}); N too small"
        if strict:
            raise ValueError(msg)
        log.warning(msg)
        prof.plateau_violation = site


# ---------------------------------------------------------------------------
# derived sets
# ---------------------------------------------------------------------------

def K_N(params: TiltParams) -> SiteSet:
    return blow_up(params.shapes, params.N)


def K_N_delta(params: TiltParams, fraction: float = 1.0) -> SiteSet:
    """Blow-up of the closed (fraction * delta)-neighbourhood of K."""
    return blow_up(params.shapes, params.N, fatten=fraction * params.delta)


def U_tilde_N(params: TiltParams) -> SiteSet:
    return blow_up(ShapeSpec("ball", (0.0,) * params.d, params.r_Utilde), params.N)


def fence(params: TiltParams) -> SiteSet:
    """Gamma^N: outer boundary of the blow-up of K^{delta/2}."""
    return boundaries(K_N_delta(params, 0.5))[0]


def mesoscopic_sets(x, N: int, exponents) -> dict:
    """B1 = B_inf(x, N^r1), B2 = B_inf(x, N^r2), B3 = B(x, N^r3), B4 = B(x, N^r4), B5 = B(x, 2 N^r4)."""
    r1, r2, r3, r4 = exponents
    if not 0 < 2 * r1 < r2 < r3 < r4 < 1:
        raise ValueError("invariant 0 < 2 r1 < r2 < r3 < r4 < 1 violated")
    x = tuple(int(c) for c in x)
    return {
        "B1": BoxSpec(x, max(N ** r1, 1.0), "sup").sites(),
        "B2": BoxSpec(x, max(N ** r2, 1.0), "sup").sites(),
        "B3": BoxSpec(x, max(N ** r3, 1.0), "euclidean").sites(),
        "B4": BoxSpec(x, max(N ** r4, 1.0), "euclidean").sites(),
        "B5": BoxSpec(x, max(2 * N ** r4, 1.0), "euclidean").sites(),
    }


# ---------------------------------------------------------------------------
# entropy and Dirichlet forms
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _octant_f_lap_sum(F, R):
    """Slices over x1 of sum_x f(x) Delta f(x) for radial f in d = 3.

    F is f by |x|^2 (1 beyond the table); the octant is weighted by the
    number of sign images of each site.
    """
    nmax = F.shape[0]
    out = np.zeros(R + 1)
    lim = R * R
    for x1 in range(R + 1):
        s = 0.0
        comp = 0.0
        for x2 in range(R + 1):
            if x1 * x1 + x2 * x2 > lim:
                break
            for x3 in range(R + 1):
                n = x1 * x1 + x2 * x2 + x3 * x3
                if n > lim:
                    break
                fx = F[n] if n < nmax else 1.0
                acc = 0.0
                for xi in (x1, x2, x3):
                    m = n + 2 * xi + 1
                    acc += F[m] if m < nmax else 1.0
                    m = n - 2 * xi + 1
                    acc += F[m] if m < nmax else 1.0
                w = 1.0
                if x1 > 0:
                    w *= 2.0
                if x2 > 0:
                    w *= 2.0
                if x3 > 0:
                    w *= 2.0
                y = w * fx * (acc / 6.0 - fx) - comp
                t = s + y
                comp = (t - s) - y
                s = t
        out[x1] = s
    return out


@numba.njit(cache=True)
def _radial_edge_energy(H, R, ms, counts):
    """Slices over x1 of sum_x (h(x + e1) - h(x))^2 for radial h in d = 3.

    ``ms`` lists the values m = x2^2 + x3^2 <= R^2 that occur and
    ``counts`` their number of representations.
    """
    nmax = H.shape[0]
    out = np.zeros(2 * R + 2)
    for i in range(2 * R + 2):
        x1 = i - R - 1
        s = 0.0
        comp = 0.0
        base = x1 * x1
        step = 2 * x1 + 1
        for j in range(ms.shape[0]):
            n = base + ms[j]
            if n >= nmax and n + step >= nmax:
                break
            a = H[n] if n < nmax else 0.0
            m2 = n + step
            b = H[m2] if m2 < nmax else 0.0
            y = counts[j] * (b - a) * (b - a) - comp
            t = s + y
            comp = (t - s) - y
            s = t
        out[i] = s
    return out


def _two_square_counts(R: int):
    ax = np.arange(-R, R + 1, dtype=np.int64)
    counts = np.zeros(R * R + 1, dtype=np.int64)
    for a in ax:
        b2 = ax ** 2
        m = a * a + b2
        m = m[m <= R * R]
        counts += np.bincount(m, minlength=R * R + 1)
    ms = np.nonzero(counts)[0]
    return ms.astype(np.int64), counts[ms].astype(np.float64)


def lattice_energy(profile: TiltProfile) -> float:
    """Dirichlet form E(h_N, h_N) of the lattice potential."""
    if profile.mode == MODE_UNIFORM:
        return 0.0
    if profile.mode == MODE_RADIAL and profile.d == 3:
        H = profile.h_table
        R = int(math.isqrt(len(H) - 1)) + 1
        ms, counts = _two_square_counts(R)
        return 0.5 * math.fsum(_radial_edge_energy(H, R, ms, counts))
    from .potential import dirichlet_form
    grid = profile.h_table.reshape(tuple(profile.shape))
    return dirichlet_form(grid)


def _grid_f_lap_sum(profile: TiltProfile) -> float:
    d = profile.d
    f = np.pad(profile._f_table.reshape(tuple(profile.shape)), 1, constant_values=1.0)
    inner = tuple(slice(1, -1) for _ in range(d))
    acc = np.zeros_like(f[inner])
    for ax in range(d):
        for sh in (0, 2):
            sl = [slice(1, -1)] * d
            sl[ax] = slice(sh, sh + f.shape[ax] - 2)
            acc += f[tuple(sl)]
    fx = f[inner]
    return math.fsum((fx * (acc / (2 * d) - fx)).ravel())


def entropy(profile: TiltProfile) -> tuple[float, float]:
    """Relative entropy of the tilted interlacement, computed two ways.

    Returns
    -------
    H_direct : float
        -u sum_x f(x) Delta f(x), with Delta f(x) = avg_e f(x+e) - f(x).
    H_formula : float
        (sqrt(u_** + epsilon) - sqrt(u))^2 E(h_N, h_N).
    """
    p = profile.params
    if p is None or p.plateau == 1.0:
        return 0.0, 0.0
    if profile.mode == MODE_RADIAL and profile.d == 3:
        R = int(math.isqrt(len(profile.h_table) - 1)) + 2
        direct = -p.u * math.fsum(_octant_f_lap_sum(profile._f_table, R))
    else:
        direct = -p.u * _grid_f_lap_sum(profile)
    return direct, p.entropy_factor * lattice_energy(profile)


@dataclass(frozen=True)
class ScanRow:
    N: int
    scaled_energy: float
    target: float
    mollified_target: float


def dirichlet_scan(params: TiltParams, N_list) -> list[ScanRow]:
    """E(h_N, h_N) / N^{d-2} along ``N_list``.

    ``target`` is (1/d) times the relative capacity of K^{2 delta} in U (the
    eta -> 0 limit); ``mollified_target`` is the exact fixed-eta limit
    (1/2d) int |grad h^eta|^2 when available, else NaN.
    """
    N_list = list(N_list)
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be increasing")
    d = params.d
    if params.is_radial:
        target = relative_capacity(params.inner_radius, params.r_U, d) / d
        mt = mollified_energy(params) if d == 3 else float("nan")
    else:
        target = mt = float("nan")
    rows = []
    for N in N_list:
        prof = build_profile(params.with_N(N), strict=False)
        rows.append(ScanRow(N, lattice_energy(prof) / N ** (d - 2), target, mt))
    return rows


def max_abs_V(profile: TiltProfile) -> float:
    """max |V| over the half-plane x3 = 0, 0 <= x2 <= x1 (all radii for radial profiles)."""
    R = int(math.ceil(profile.support_radius)) + 2
    if R < 1:
        return 0.0
    ax = np.arange(0, R + 1)
    a, b = np.meshgrid(ax, ax, indexing="ij")
    keep = b <= a
    pts = np.zeros((keep.sum(), profile.d), dtype=np.int64)
    pts[:, 0], pts[:, 1] = a[keep], b[keep]
    if profile.mode == MODE_GRID:
        grid = np.argwhere(np.ones(tuple(profile.shape), dtype=bool)) + profile.origin
        pts = grid
    return float(np.abs(profile.V(pts)).max())
