"""Discrete potential theory for the continuous-time simple random walk on Z^d.

Free, killed and tilted Green functions, equilibrium measures and
capacities, Dirichlet forms, entrance measures and the sweeping identity,
all by dense or sparse linear algebra.

Conventions
-----------
The walk jumps at rate 1 to a uniformly chosen neighbour, so the free Green
function is g = (I - P)^{-1} with P the one-step transition matrix and
g(x, y) is the expected time spent at y starting from x.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from math import gamma, pi

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import SiteSet, boundaries, unit_vectors

log = logging.getLogger(__name__)

MAX_DENSE = 8000


def c0(d: int) -> float:
    """Constant of the Brownian kernel G(y) = c0 |y|^{2-d} (1/(2 pi) in d = 3)."""
    return gamma(d / 2 - 1) / (2 * pi ** (d / 2))


def green_asymptotic(z, d: int = 3) -> np.ndarray:
    """Large-|z| expansion of g(0, z).

    Leading term d c0 |z|^{2-d}; in d = 3 the cubic-anisotropic |z|^{-3}
    correction is included, leaving an error of order |z|^{-5}.
    """
    z = np.asarray(z, dtype=float)
    r2 = (z ** 2).sum(axis=-1)
    r = np.sqrt(r2)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = d * c0(d) * r ** (2 - d)
        if d == 3:
            s4 = (z ** 4).sum(axis=-1) / r2 ** 2
            out = out + 3.0 * (5.0 * s4 - 3.0) / (16.0 * pi * r ** 3)
    return out


def _asymptotic_order(d: int) -> int:
    return 5 if d == 3 else d


# ---------------------------------------------------------------------------
# free Green function table
# ---------------------------------------------------------------------------

def _octant_solve(R: int, d: int, rtol: float = 1e-13) -> tuple[np.ndarray, int]:
    """g(0, z) on the octant {0..R}^d of the cube [-R, R]^d.

    Dirichlet data on the layer |z|_inf = R + 1 come from the asymptotic
    expansion; reflection symmetry z_i -> -z_i reduces the cube to an
    octant, and weighting each site by its number of mirror images makes
    the reduced operator symmetric positive definite for conjugate gradients.
    """
    n = R + 1
    shape = (n,) * d
    idx = np.indices(shape)
    w = 2.0 ** (idx != 0).sum(axis=0)
    del idx
    ext = (n + 2,) * d
    bnd = np.zeros(ext)
    g = np.indices(ext) - 1.0
    layer = (g == R + 1).any(axis=0)
    bnd[layer] = green_asymptotic(np.moveaxis(g, 0, -1)[layer], d)
    del g, layer
    inner = tuple(slice(1, n + 1) for _ in range(d))

    def neighbour_sum(v, withb):
        u = bnd.copy() if withb else np.zeros(ext)
        u[inner] = v.reshape(shape)
        for ax in range(d):
            src = [slice(None)] * d
            dst = [slice(None)] * d
            src[ax], dst[ax] = 2, 0
            u[tuple(dst)] = u[tuple(src)]
        s = np.zeros(shape)
        for ax in range(d):
            for sh in (0, 2):
                sl = [slice(1, n + 1)] * d
                sl[ax] = slice(sh, sh + n)
                s += u[tuple(sl)]
        return s / (2 * d)

    def matvec(v):
        return (w * (v.reshape(shape) - neighbour_sum(v, False))).ravel()

    A = spla.LinearOperator((n ** d, n ** d), matvec=matvec, dtype=float)
    b = neighbour_sum(np.zeros(n ** d), True)
    b[(0,) * d] += 1.0
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.cg(A, (w * b).ravel(), rtol=rtol, atol=0.0, maxiter=50 * n * d, callback=cb)
    if info != 0:
        raise RuntimeError(f"octant Green solve did not converge (info={info})")
    return x.reshape(shape), count[0]


def _cache_dir() -> str:
    return os.environ.get("TILTLACE_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "tiltlace"))


class FreeGreen:
    """Tabulated free Green function g(0, z) with an asymptotic far field.

    The table holds |z|_inf <= radius. It is the Richardson combination of
    two octant solves at radii R and R/2, whose boundary error decays like
    R^{-p} (p = 5 in d = 3, p = d otherwise). Beyond the table the
    asymptotic expansion is used, with an error constant fitted on the
    outer half of the table.

    Attributes
    ----------
    table : ndarray, shape (radius + 1,) * d
        g(0, z) indexed by |z_1|, ..., |z_d|.
    tol : float
        Certified accuracy of table entries (Richardson difference).
    far_constant : float
        C such that |g - g_asym| <= C |z|^{-p} on the outer half of the table.
    """

    VERSION = 2

    def __init__(self, d: int = 3, radius: int = 64, use_cache: bool = True):
        if d < 3:
            raise ValueError("transient walks need d >= 3")
        self.d = d
        self.radius = int(radius)
        self.order = _asymptotic_order(d)
        path = os.path.join(_cache_dir(), f"green_d{d}_R{self.radius}_v{self.VERSION}.npz")
        data = None
        if use_cache and os.path.exists(path):
            try:
                data = np.load(path)
            except (OSError, ValueError):
                data = None
        if data is not None:
            self.table = data["table"]
            self.tol = float(data["tol"])
            self.far_constant = float(data["far"])
        else:
            self._build()
            if use_cache:
                try:
                    os.makedirs(os.path.dirname(path), exist_ok=True)
                    np.savez(path, table=self.table, tol=self.tol, far=self.far_constant)
                except OSError:
                    pass
        self.table.setflags(write=False)
        self._flat = np.ascontiguousarray(self.table).ravel()

    def _build(self):
        R, d, p = self.radius, self.d, self.order
        fine, it1 = _octant_solve(R, d)
        half = R // 2
        coarse, it2 = _octant_solve(half, d)
        core = tuple(slice(0, half // 2 + 1) for _ in range(d))
        diff = fine[core] - coarse[core]
        table = fine.copy()
        table[core] += diff / (2.0 ** p - 1.0)
        self.tol = float(np.abs(diff).max() / (2.0 ** p - 1.0)) + 1e-12
        idx = np.moveaxis(np.indices(table.shape), 0, -1)
        r = np.sqrt((idx ** 2).sum(axis=-1))
        outer = (r >= R / 2) & (idx.max(axis=-1) <= R)
        err = np.abs(table[outer] - green_asymptotic(idx[outer], d)) * r[outer] ** p
        self.far_constant = float(err.max() * 1.5)
        self.table = table
        log.info("free Green table d=%d R=%d (%d+%d CG iterations), tol %.2e", d, R, it1, it2, self.tol)

    def __call__(self, z) -> np.ndarray:
        """g(0, z) for integer sites ``z`` of shape (..., d)."""
        z = np.abs(np.asarray(z, dtype=np.int64))
        out = np.empty(z.shape[:-1])
        inside = z.max(axis=-1) <= self.radius
        out[inside] = self.table[tuple(np.moveaxis(z[inside], -1, 0))]
        out[~inside] = green_asymptotic(z[~inside], self.d)
        return out

    def error_bound(self, z) -> np.ndarray:
        """Accuracy certificate for g(0, z)."""
        z = np.abs(np.asarray(z, dtype=np.int64))
        r = np.sqrt((z ** 2).sum(axis=-1))
        far = self.far_constant / np.maximum(r, 1.0) ** self.order
        return np.where(z.max(axis=-1) <= self.radius, self.tol, far)

    def matrix(self, X, Y=None) -> np.ndarray:
        """Dense matrix g(X_i, Y_j)."""
        X = np.ascontiguousarray(X, dtype=np.int64)
        Y = X if Y is None else np.ascontiguousarray(Y, dtype=np.int64)
        out = np.empty((len(X), len(Y)))
        _green_matrix(self._flat, self.radius, self.d, X, Y, out)
        return out

    def occupation(self, X, B) -> np.ndarray:
        """sum_{y in B} g(x, y) for each row x of X."""
        X = np.ascontiguousarray(X, dtype=np.int64).reshape(-1, self.d)
        B = np.ascontiguousarray(B, dtype=np.int64)
        out = np.empty(len(X))
        _occupation_sums(self._flat, self.radius, self.d, X, B, out)
        return out

    @property
    def kernel_args(self):
        return self._flat, self.radius


@numba.njit(inline="always")
def _g_lookup(flat, R, d, z):
    inside = True
    for i in range(d):
        if abs(z[i]) > R:
            inside = False
            break
    if inside:
        k = 0
        for i in range(d):
            k = k * (R + 1) + abs(z[i])
        return flat[k]
    r2 = 0.0
    s4 = 0.0
    for i in range(d):
        t = float(z[i]) * float(z[i])
        r2 += t
        s4 += t * t
    r = np.sqrt(r2)
    if d == 3:
        return 3.0 / (2.0 * np.pi * r) + 3.0 * (5.0 * s4 / (r2 * r2) - 3.0) / (16.0 * np.pi * r2 * r)
    cd = np.exp(math.lgamma(d / 2.0 - 1.0) - np.log(2.0) - (d / 2.0) * np.log(np.pi))
    return d * cd * r ** (2.0 - d)


@numba.njit(cache=True)
def _green_matrix(flat, R, d, X, Y, out):
    z = np.empty(d, dtype=np.int64)
    for i in range(X.shape[0]):
        for j in range(Y.shape[0]):
            for k in range(d):
                z[k] = Y[j, k] - X[i, k]
            out[i, j] = _g_lookup(flat, R, d, z)


@numba.njit(cache=True)
def _occupation_sums(flat, R, d, X, B, out):
    z = np.empty(d, dtype=np.int64)
    for i in range(X.shape[0]):
        s = 0.0
        c = 0.0
        for j in range(B.shape[0]):
            for k in range(d):
                z[k] = B[j, k] - X[i, k]
            y = _g_lookup(flat, R, d, z) - c
            t = s + y
            c = (t - s) - y
            s = t
        out[i] = s


@lru_cache(maxsize=4)
def free_green(d: int = 3, radius: int = 64) -> FreeGreen:
    """Process-wide cached free Green table."""
    return FreeGreen(d, radius)


def green(x, y, tol: float = 1e-8, d: int | None = None) -> float:
    """Free Green function g(x, y) to within ``tol``.

    Raises
    ------
    ValueError
        If the certified accuracy of the table is worse than ``tol``.
    """
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    G = free_green(d or len(x))
    z = y - x
    err = float(G.error_bound(z[None])[0])
    if err > tol:
        raise ValueError(f"requested tol {tol:g} not achievable (certified {err:.2e})")
    return float(G(z[None])[0])


# ---------------------------------------------------------------------------
# tables and measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GreenTable:
    """Dense symmetric Green matrix over an ordered site set.

    ``flavor`` is one of ``free``, ``killed``, ``tilted_free`` or
    ``tilted_killed``; ``tol`` is the achieved accuracy.
    """

    sites: SiteSet
    values: np.ndarray
    flavor: str
    tol: float

    def value(self, x, y) -> float:
        i, j = self.sites.index_of(np.array([x, y]))
        if i < 0 or j < 0:
            raise KeyError("site not in table")
        return float(self.values[i, j])

    def to_csv(self, path_or_buf, header: str | None = None) -> None:
        d = self.sites.d
        cols = [f"x{k + 1}" for k in range(d)] + [f"y{k + 1}" for k in range(d)] + ["value"]
        lines = []
        if header:
            lines.append(f"# {header}")
        lines.append(",".join(cols))
        C = self.sites.coords
        for i in range(len(C)):
            xi = ",".join(map(str, C[i]))
            for j in range(len(C)):
                lines.append(f"{xi},{','.join(map(str, C[j]))},{self.values[i, j]:.17g}")
        text = "\n".join(lines) + "\n"
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w") as fh:
                fh.write(text)


@dataclass(frozen=True)
class EquilibriumMeasure:
    """Equilibrium measure of a finite set, listed on the set's inner boundary.

    Attributes
    ----------
    sites : SiteSet
        Inner boundary of ``ambient``, where the weights can be nonzero.
    weights : ndarray
        Nonnegative weight per site of ``sites``.
    total : float
        Capacity (sum of the weights).
    flavor : str
        ``standard`` or ``tilted``.
    ambient : SiteSet
        The set M whose equilibrium measure this is.
    residual : float
        max_x |sum_y g(x, y) e(y) - 1| over the solve sites.
    """

    sites: SiteSet
    weights: np.ndarray
    total: float
    flavor: str
    ambient: SiteSet
    residual: float = 0.0

    def weight_on(self, points) -> np.ndarray:
        idx = self.sites.index_of(points)
        return np.where(idx >= 0, self.weights[np.maximum(idx, 0)], 0.0)


def free_green_table(M: SiteSet) -> GreenTable:
    """Free Green function restricted to M x M."""
    G = free_green(M.d)
    vals = G.matrix(M.coords)
    return GreenTable(M, vals, "free", G.tol)


def transition_matrix(U: SiteSet) -> sp.csr_matrix:
    """Substochastic one-step matrix of the walk killed on leaving U."""
    d = U.d
    n = len(U)
    rows, cols = [], []
    for e in unit_vectors(d):
        j = U.index_of(U.coords + e)
        ok = j >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(j[ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sp.csr_matrix((np.full(len(rows), 1.0 / (2 * d)), (rows, cols)), shape=(n, n))


def _dense_spd_inverse(A: np.ndarray) -> np.ndarray:
    c = sla.cho_factor(A, lower=True)
    inv = sla.cho_solve(c, np.eye(len(A)))
    return 0.5 * (inv + inv.T)


def killed_green_table(U: SiteSet) -> GreenTable:
    """Green function of the walk killed on leaving U, g_U = (I - P_U)^{-1}."""
    n = len(U)
    if n == 0:
        raise ValueError("U must be nonempty")
    if n > MAX_DENSE:
        raise ValueError(f"|U| = {n} exceeds the dense limit {MAX_DENSE}")
    A = (sp.identity(n) - transition_matrix(U)).toarray()
    G = _dense_spd_inverse(A)
    res = float(np.abs(A @ G - np.eye(n)).max())
    return GreenTable(U, G, "killed", res)


class KilledSolver:
    """Sparse factorisation of I - P_U for repeated killed-Green solves on large U."""

    def __init__(self, U: SiteSet):
        self.U = U
        n = len(U)
        self.A = (sp.identity(n, format="csc") - transition_matrix(U).tocsc()).tocsc()
        self.lu = spla.splu(self.A)

    def columns(self, sources) -> np.ndarray:
        """g_U(., s) for each source site s (columns)."""
        idx = self.U.index_of(sources)
        if np.any(idx < 0):
            raise ValueError("source outside U")
        rhs = np.zeros((len(self.U), len(idx)))
        rhs[idx, np.arange(len(idx))] = 1.0
        return self.lu.solve(rhs)

    def solve(self, rhs) -> np.ndarray:
        return self.lu.solve(np.asarray(rhs, dtype=float))


def _clip_weights(w: np.ndarray, tol: float, what: str) -> np.ndarray:
    if w.size and w.min() < -10 * tol:
        raise ValueError(f"negative {what} weight {w.min():.3e} below -10*tol; Green table inaccurate")
    return np.maximum(w, 0.0)


def equilibrium_and_capacity(M: SiteSet, tol: float = 1e-9) -> EquilibriumMeasure:
    """Equilibrium measure and capacity of a finite set.

    Solves sum_y g(x, y) e(y) = 1 on the inner boundary A of M (the
    equilibrium measure lives on A and e_M = e_A).
    """
    if len(M) == 0:
        raise ValueError("M must be nonempty")
    _, A, _ = boundaries(M)
    if len(A) == 0:
        A = M
    if len(A) > MAX_DENSE:
        raise ValueError(f"|inner boundary| = {len(A)} exceeds the dense limit {MAX_DENSE}")
    G = free_green(M.d)
    gAA = G.matrix(A.coords)
    c = sla.cho_factor(gAA, lower=True)
    w = sla.cho_solve(c, np.ones(len(A)))
    res = float(np.abs(gAA @ w - 1.0).max())
    w = _clip_weights(w, max(tol, G.tol), "equilibrium")
    return EquilibriumMeasure(A, w, float(w.sum()), "standard", M, res)


def capacity(M: SiteSet) -> float:
    return equilibrium_and_capacity(M).total


def equilibrium_residual(M: SiteSet, eq: EquilibriumMeasure | None = None) -> float:
    """max over x in M of |sum_y g(x, y) e_M(y) - 1|, including interior x."""
    eq = eq or equilibrium_and_capacity(M)
    G = free_green(M.d)
    vals = G.matrix(M.coords, eq.sites.coords) @ eq.weights
    return float(np.abs(vals - 1.0).max())


def dirichlet_form(fn, origin=None, d: int | None = None) -> float:
    """Dirichlet form (1/2) sum_{|x-y|=1} (1/2d) (fn(y) - fn(x))^2.

    Parameters
    ----------
    fn : ndarray, dict or (SiteSet, values)
        A grid (taken as zero outside), a mapping site -> value, or a site
        set with matching values.
    """
    if isinstance(fn, np.ndarray):
        grid = fn
    else:
        if isinstance(fn, dict):
            pts = np.array(list(fn.keys()), dtype=np.int64).reshape(len(fn), -1)
            vals = np.array(list(fn.values()), dtype=float)
        else:
            S, vals = fn
            pts = S.coords
            vals = np.asarray(vals, dtype=float)
        if len(pts) == 0:
            return 0.0
        lo = pts.min(axis=0)
        shape = tuple((pts.max(axis=0) - lo + 1).tolist())
        grid = np.zeros(shape)
        np.add.at(grid, tuple((pts - lo).T), vals)
    g = np.pad(np.asarray(grid, dtype=float), 1)
    dd = g.ndim
    total = 0.0
    for ax in range(dd):
        total += float((np.diff(g, axis=ax) ** 2).sum())
    return total / (2 * dd)


def entrance_measure(A: SiteSet, B: SiteSet | None, x, tol: float = 1e-9):
    """Entrance law h_{A,B}(x, .) = P_x[H_A < T_B, X_{H_A} = .].

    Parameters
    ----------
    A : SiteSet
        Target set.
    B : SiteSet or None
        Killing domain containing A; ``None`` means the whole lattice.
    x : site
        Starting point (in B when B is given).

    Returns
    -------
    sites : SiteSet
        A (the support of the entrance law).
    probs : ndarray
        Entrance probabilities over A.
    no_entry : float
        P_x[T_B < H_A] (or P_x[H_A = infinity] on the whole lattice).
    """
    x = np.asarray(x, dtype=np.int64)
    ix = A.index_of(x[None])[0]
    if ix >= 0:
        p = np.zeros(len(A))
        p[ix] = 1.0
        return A, p, 0.0
    if B is None:
        p = entrance_matrix(A, x[None])[0]
        return A, p, float(1.0 - p.sum())
    if not A.issubset(B):
        raise ValueError("A must be contained in B")
    if not B.contains(x[None])[0]:
        raise ValueError("x must lie in B")
    D = B.difference(A)
    solver = KilledSolver(D)
    v = solver.columns(x[None])[:, 0]
    p = np.zeros(len(A))
    d = A.d
    for e in unit_vectors(d):
        nb = D.index_of(A.coords + e)
        ok = nb >= 0
        p[ok] += v[nb[ok]] / (2 * d)
    return A, p, float(1.0 - p.sum())


def entrance_matrix(A: SiteSet, sources) -> np.ndarray:
    """h_A(s, .) over A for each source s outside A, via g(s, A) g_AA^{-1}."""
    G = free_green(A.d)
    gAA = G.matrix(A.coords)
    c = sla.cho_factor(gAA, lower=True)
    gsA = G.matrix(np.asarray(sources, dtype=np.int64), A.coords)
    return sla.cho_solve(c, gsA.T).T


def expected_occupation(x, B: SiteSet, tol: float = 1e-8) -> float:
    """Expected total time spent in B by the walk from x: sum_{y in B} g(x, y)."""
    G = free_green(B.d)
    return float(G.occupation(np.asarray(x, dtype=np.int64)[None], B.coords)[0])


def sweeping_residual(M: SiteSet, Mp: SiteSet, tol: float = 1e-9) -> float:
    """max_y |sum_x e_{M'}(x) h_M(x, y) - e_M(y)| for M inside M'."""
    if not M.issubset(Mp):
        raise ValueError("M must be contained in M'")
    eMp = equilibrium_and_capacity(Mp, tol)
    eM = equilibrium_and_capacity(M, tol)
    X = eMp.sites.coords
    inM = M.index_of(X)
    A = eM.sites
    H = np.zeros((len(X), len(A)))
    out = inM < 0
    if out.any():
        H[out] = entrance_matrix(A, X[out])
    # sources already in M enter at once
    inA = A.index_of(X[~out])
    H[np.nonzero(~out)[0][inA >= 0], inA[inA >= 0]] = 1.0
    swept = eMp.weights @ H
    return float(np.abs(swept - eM.weights).max())


# ---------------------------------------------------------------------------
# tilted potential theory
# ---------------------------------------------------------------------------

def tilt_support(profile) -> SiteSet:
    """Sites where the tilted operator differs from the simple one.

    This is the set of x with f(x) != 1 or f != 1 at some neighbour.
    """
    core = profile.support()
    if len(core) == 0:
        return core
    _, _, closure = boundaries(core)
    return closure


def tilted_operator(profile, S: SiteSet):
    """Dense blocks of D - C on S: D(x) = f(x) avg_e f(x+e), C(x,y) = f(x) f(y)/2d."""
    d = S.d
    fS = profile.f(S.coords)
    Dm = np.zeros(len(S))
    rows, cols, vals = [], [], []
    for e in unit_vectors(d):
        nb = S.coords + e
        fn = profile.f(nb)
        Dm += fS * fn / (2 * d)
        j = S.index_of(nb)
        ok = j >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(j[ok])
        vals.append(-fS[ok] * fn[ok] / (2 * d))
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(S), len(S)))
    return (M + sp.diags(Dm)).toarray()


class TiltedGreen:
    """Exact free tilted Green function via a finite-rank correction.

    With L = I - P and L~ = D - C, the difference L~ - L vanishes outside
    T x T (T = tilt support), so
    g~ = g - g[:, T] (I + Delta_TT g_TT)^{-1} Delta_TT g[T, :].
    """

    def __init__(self, profile, max_dense: int = MAX_DENSE):
        self.profile = profile
        T = tilt_support(profile)
        d = profile.d
        self.T = T
        self.G = free_green(d)
        if len(T) > max_dense:
            raise ValueError(f"tilt support has {len(T)} sites, above the dense limit {max_dense}")
        if len(T) == 0:
            self.delta = np.zeros((0, 0))
            return
        L = (sp.identity(len(T)) - transition_matrix(T)).toarray()
        self.delta = tilted_operator(profile, T) - L
        gTT = self.G.matrix(T.coords)
        K = np.eye(len(T)) + self.delta @ gTT
        self.lu = sla.lu_factor(K)

    def matrix(self, X, Y=None) -> np.ndarray:
        X = np.asarray(X, dtype=np.int64)
        Y = X if Y is None else np.asarray(Y, dtype=np.int64)
        out = self.G.matrix(X, Y)
        if len(self.T):
            gXT = self.G.matrix(X, self.T.coords)
            gTY = self.G.matrix(self.T.coords, Y)
            out -= gXT @ sla.lu_solve(self.lu, self.delta @ gTY)
        return out


def tilted_green_table(M: SiteSet, profile, tol: float = 1e-8, max_dense: int = MAX_DENSE) -> GreenTable:
    """Tilted Green function g~ on M x M.

    The achieved tolerance is the residual of (D - C) g~ = I on the rows of M,
    evaluated with g~ on the closure of M.
    """
    tg = TiltedGreen(profile, max_dense)
    _, _, closure = boundaries(M)
    full = tg.matrix(closure.coords, M.coords)
    rows = closure.index_of(M.coords)
    vals = full[rows]
    vals = 0.5 * (vals + vals.T)
    op = tilted_operator(profile, closure)
    res = float(np.abs((op @ full)[rows] - np.eye(len(M))).max())
    if res > max(tol, 100 * tg.G.tol):
        raise ValueError(f"tilted Green residual {res:.2e} above tolerance")
    return GreenTable(M, vals, "tilted_free", res)


def tilted_killed_green_table(U: SiteSet, profile) -> GreenTable:
    """Tilted Green function killed on leaving U: inverse of (D - C) restricted to U."""
    if len(U) > MAX_DENSE:
        raise ValueError(f"|U| = {len(U)} exceeds the dense limit {MAX_DENSE}")
    A = tilted_operator(profile, U)
    G = _dense_spd_inverse(A)
    return GreenTable(U, G, "tilted_killed", float(np.abs(A @ G - np.eye(len(U))).max()))


def tilted_equilibrium_and_capacity(M: SiteSet, profile, tol: float = 1e-9, tilted: TiltedGreen | None = None) -> EquilibriumMeasure:
    """Tilted equilibrium measure: solve sum_y g~(x, y) e~(y) = 1 on the inner boundary of M."""
    _, A, _ = boundaries(M)
    if len(A) == 0:
        A = M
    tg = tilted or TiltedGreen(profile)
    g = tg.matrix(A.coords)
    g = 0.5 * (g + g.T)
    c = sla.cho_factor(g, lower=True)
    w = sla.cho_solve(c, np.ones(len(A)))
    res = float(np.abs(g @ w - 1.0).max())
    w = _clip_weights(w, max(tol, tg.G.tol), "tilted equilibrium")
    return EquilibriumMeasure(A, w, float(w.sum()), "tilted", M, res)
