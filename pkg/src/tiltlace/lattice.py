"""Integer lattice geometry.

Finite site sets with hash-based and vectorised membership, discrete
blow-ups of continuum shapes, lattice boundaries and nearest-neighbour
connectivity queries.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np


def unit_vectors(d: int) -> np.ndarray:
    """Return the 2d nearest-neighbour steps ordered (+e1, -e1, +e2, -e2, ...)."""
    e = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        e[2 * i, i] = 1
        e[2 * i + 1, i] = -1
    return e


class SiteSet:
    """Finite, deduplicated set of sites of Z^d.

    Parameters
    ----------
    coords : array_like, shape (n, d)
        Integer coordinates. Duplicates are removed and rows are sorted
        lexicographically, so two sets with the same members compare equal.
    d : int, optional
        Dimension, only needed when ``coords`` is empty.
    """

    __slots__ = ("coords", "_members")

    def __init__(self, coords, d: int | None = None):
        arr = np.asarray(coords, dtype=np.int64)
        if arr.size == 0:
            if d is None:
                d = arr.shape[1] if arr.ndim == 2 else 3
            arr = np.zeros((0, d), dtype=np.int64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise ValueError("coords must have shape (n, d)")
        if d is not None and arr.shape[1] != d:
            raise ValueError(f"dimension mismatch: got {arr.shape[1]}, expected {d}")
        if len(arr):
            arr = np.unique(arr, axis=0)
        arr.setflags(write=False)
        self.coords = arr
        self._members = None

    # -- basic protocol --------------------------------------------------
    @property
    def d(self) -> int:
        return self.coords.shape[1]

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __iter__(self):
        return (tuple(int(c) for c in row) for row in self.coords)

    def __contains__(self, site) -> bool:
        if self._members is None:
            self._members = frozenset(map(tuple, self.coords.tolist()))
        return tuple(int(c) for c in site) in self._members

    def __eq__(self, other) -> bool:
        if not isinstance(other, SiteSet):
            return NotImplemented
        return self.coords.shape == other.coords.shape and bool(np.all(self.coords == other.coords))

    def __hash__(self):
        return hash(self.coords.tobytes())

    def __repr__(self) -> str:
        return f"SiteSet(n={len(self)}, d={self.d})"

    # -- vectorised membership -------------------------------------------
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of the bounding box (inclusive)."""
        if len(self) == 0:
            z = np.zeros(self.d, dtype=np.int64)
            return z, z - 1
        return self.coords.min(axis=0), self.coords.max(axis=0)

    def contains(self, points) -> np.ndarray:
        """Vectorised membership test for an array of sites, shape (m, d)."""
        pts = np.asarray(points, dtype=np.int64).reshape(-1, self.d)
        out = np.zeros(len(pts), dtype=bool)
        if len(self) == 0 or len(pts) == 0:
            return out
        lo, hi = self.bounds()
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        shape = tuple((hi - lo + 1).tolist())
        own = np.ravel_multi_index(tuple((self.coords - lo).T), shape)
        keys = np.ravel_multi_index(tuple((pts[inside] - lo).T), shape)
        pos = np.searchsorted(own, keys)
        pos[pos == len(own)] = 0
        out[inside] = own[pos] == keys
        return out

    def index_of(self, points) -> np.ndarray:
        """Row index of each site in ``coords`` (-1 when absent)."""
        pts = np.asarray(points, dtype=np.int64).reshape(-1, self.d)
        idx = np.full(len(pts), -1, dtype=np.int64)
        if len(self) == 0 or len(pts) == 0:
            return idx
        lo, hi = self.bounds()
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        shape = tuple((hi - lo + 1).tolist())
        own = np.ravel_multi_index(tuple((self.coords - lo).T), shape)
        keys = np.ravel_multi_index(tuple((pts[inside] - lo).T), shape)
        pos = np.searchsorted(own, keys)
        pos[pos == len(own)] = 0
        hit = own[pos] == keys
        sub = np.where(hit, pos, -1)
        idx[inside] = sub
        return idx

    # -- set algebra -----------------------------------------------------
    def union(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(np.concatenate([self.coords, other.coords]), d=self.d)

    def intersection(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(self.coords[other.contains(self.coords)], d=self.d)

    def difference(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(self.coords[~other.contains(self.coords)], d=self.d)

    def issubset(self, other: "SiteSet") -> bool:
        return bool(np.all(other.contains(self.coords)))

    def translate(self, v) -> "SiteSet":
        return SiteSet(self.coords + np.asarray(v, dtype=np.int64), d=self.d)

    # -- grids -------------------------------------------------------------
    def to_mask(self, origin, shape) -> np.ndarray:
        """Boolean grid of the given shape whose index 0 sits at ``origin``."""
        mask = np.zeros(tuple(shape), dtype=bool)
        rel = self.coords - np.asarray(origin, dtype=np.int64)
        ok = np.all((rel >= 0) & (rel < np.asarray(shape)), axis=1)
        mask[tuple(rel[ok].T)] = True
        return mask

    @classmethod
    def from_mask(cls, mask: np.ndarray, origin) -> "SiteSet":
        pts = np.argwhere(mask).astype(np.int64) + np.asarray(origin, dtype=np.int64)
        return cls(pts, d=mask.ndim)

    # -- serialisation -----------------------------------------------------
    def to_text(self) -> str:
        return "".join(" ".join(str(int(c)) for c in row) + "\n" for row in self.coords)

    @classmethod
    def from_text(cls, text: str, d: int | None = None) -> "SiteSet":
        rows = [list(map(int, ln.split())) for ln in text.splitlines() if ln.strip()]
        return cls(rows, d=d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path, d: int | None = None) -> "SiteSet":
        with open(path) as fh:
            return cls.from_text(fh.read(), d=d)


@dataclass(frozen=True)
class ShapeSpec:
    """Compact body K in R^d: a closed ball, a closed cube or a point.

    ``size`` is the radius of a ball or the half-side of a cube and is
    ignored for points.
    """

    kind: str
    center: tuple
    size: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ball", "box", "point"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.kind != "point" and not self.size > 0:
            raise ValueError("radius/half-side must be positive for non-point shapes")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def outer_radius(self) -> float:
        """Radius of the smallest ball around ``center`` containing the shape."""
        if self.kind == "ball":
            return self.size
        if self.kind == "box":
            return self.size * np.sqrt(self.d)
        return 0.0

    def distance(self, z) -> np.ndarray:
        """Euclidean distance from continuum points ``z`` (shape (..., d)) to the shape."""
        z = np.asarray(z, dtype=float) - np.asarray(self.center)
        if self.kind == "point":
            return np.sqrt((z ** 2).sum(axis=-1))
        if self.kind == "ball":
            return np.maximum(np.sqrt((z ** 2).sum(axis=-1)) - self.size, 0.0)
        gap = np.maximum(np.abs(z) - self.size, 0.0)
        return np.sqrt((gap ** 2).sum(axis=-1))

    def cube_distance(self, x: np.ndarray, N: float) -> np.ndarray:
        """Euclidean distance from the closed unit sup-cube around each site to N times the shape."""
        x = np.asarray(x, dtype=float)
        c = N * np.asarray(self.center)
        if self.kind == "box":
            gap = np.maximum(np.abs(x - c) - 1.0 - N * self.size, 0.0)
            return np.sqrt((gap ** 2).sum(axis=-1))
        gap = np.maximum(np.abs(x - c) - 1.0, 0.0)
        dist = np.sqrt((gap ** 2).sum(axis=-1))
        if self.kind == "ball":
            dist = np.maximum(dist - N * self.size, 0.0)
        return dist

    def sup_distance_le_one(self, x: np.ndarray, N: float, fatten: float = 0.0) -> np.ndarray:
        """Whether the closed unit sup-cube around each site meets N times the shape.

        With ``fatten`` = r the test is against N times the closed
        r-neighbourhood of the shape.
        """
        x = np.asarray(x, dtype=float)
        if fatten == 0.0 and self.kind != "ball":
            # exact integer comparison for the common cases
            c = N * np.asarray(self.center)
            extra = N * self.size if self.kind == "box" else 0.0
            return np.max(np.abs(x - c), axis=-1) <= extra + 1.0 + 1e-12
        reach = N * fatten
        return self.cube_distance(x, N) <= reach * (1 + 1e-14) + 1e-12

    def fattened(self, r: float) -> "ShapeSpec":
        """Closed r-neighbourhood for balls and points (a ball in both cases)."""
        if self.kind == "box":
            raise ValueError("the neighbourhood of a box is not a box")
        return ShapeSpec("ball", self.center, self.size + r)


def _as_shapes(shape) -> list[ShapeSpec]:
    if isinstance(shape, ShapeSpec):
        return [shape]
    return list(shape)


def blow_up(shape: ShapeSpec | Sequence[ShapeSpec], N: int, fatten: float = 0.0) -> SiteSet:
    """Discrete blow-up {x in Z^d : d_inf(x, N K) <= 1} of a shape or a union of shapes.

    Parameters
    ----------
    shape : ShapeSpec or sequence of ShapeSpec
        The body K (a union when a sequence is given).
    N : int
        Scale factor, at least 1.
    fatten : float
        Blow up the closed ``fatten``-neighbourhood K^r instead of K.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    shapes = _as_shapes(shape)
    d = shapes[0].d
    if any(s.d != d for s in shapes):
        raise ValueError("dimension mismatch between shapes")
    parts = []
    for s in shapes:
        c = N * np.asarray(s.center)
        reach = N * (s.outer_radius + fatten) + 1.0
        lo = np.floor(c - reach).astype(np.int64)
        hi = np.ceil(c + reach).astype(np.int64)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        parts.append(grid[s.sup_distance_le_one(grid, N, fatten)])
    return SiteSet(np.concatenate(parts), d=d)


@dataclass(frozen=True)
class BoxSpec:
    """Lattice ball B(center, radius) in the Euclidean or sup norm."""

    center: tuple
    radius: float
    norm: str = "sup"

    def __post_init__(self):
        if self.norm not in ("euclidean", "sup"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def reach(self) -> int:
        """Integer half-width of the bounding cube."""
        return int(np.floor(self.radius + 1e-12))

    def contains(self, points) -> np.ndarray:
        rel = np.asarray(points, dtype=np.int64) - np.asarray(self.center)
        if self.norm == "sup":
            return np.max(np.abs(rel), axis=-1) <= self.radius + 1e-12
        return (rel ** 2).sum(axis=-1) <= self.radius ** 2 * (1 + 1e-14) + 1e-12

    def mask(self) -> tuple[np.ndarray, np.ndarray]:
        """Boolean grid over the bounding cube and the grid origin."""
        r = self.reach
        ax = np.arange(-r, r + 1)
        if self.norm == "sup":
            m = np.ones((2 * r + 1,) * self.d, dtype=bool)
        else:
            sq = np.zeros((2 * r + 1,) * self.d, dtype=np.int64)
            for i in range(self.d):
                sh = [1] * self.d
                sh[i] = -1
                sq = sq + (ax ** 2).reshape(sh)
            m = sq <= self.radius ** 2 * (1 + 1e-14) + 1e-12
        return m, np.asarray(self.center, dtype=np.int64) - r

    def sites(self) -> SiteSet:
        m, origin = self.mask()
        return SiteSet.from_mask(m, origin)


def box(center, radius, norm: str = "sup") -> SiteSet:
    """Shorthand for ``BoxSpec(center, radius, norm).sites()``."""
    return BoxSpec(tuple(center), radius, norm).sites()


def neighbours(S: SiteSet) -> np.ndarray:
    """All 2d neighbours of every site, shape (|S|, 2d, d)."""
    return S.coords[:, None, :] + unit_vectors(S.d)[None, :, :]


def boundaries(S: SiteSet) -> tuple[SiteSet, SiteSet, SiteSet]:
    """Outer boundary, inner boundary and closure of a finite set.

    Returns
    -------
    outer : SiteSet
        Sites outside S with a neighbour in S.
    inner : SiteSet
        Sites of S with a neighbour outside S.
    closure : SiteSet
        S together with its outer boundary.
    """
    if len(S) == 0:
        empty = SiteSet([], d=S.d)
        return empty, empty, empty
    nb = neighbours(S)
    flat = nb.reshape(-1, S.d)
    inside = S.contains(flat).reshape(len(S), 2 * S.d)
    outer = SiteSet(flat[~inside.ravel()], d=S.d)
    inner = SiteSet(S.coords[~inside.all(axis=1)], d=S.d)
    return outer, inner, S.union(outer)


def connected(K: SiteSet, L: SiteSet, allowed: SiteSet) -> bool:
    """Whether some nearest-neighbour path inside ``allowed`` joins K to L.

    Breadth-first search from K ∩ allowed; a single site of K ∩ L ∩ allowed
    counts as a path.
    """
    start = K.intersection(allowed)
    if len(start) == 0 or len(L) == 0:
        return False
    if np.any(L.contains(start.coords)):
        return True
    steps = [tuple(e) for e in unit_vectors(K.d).tolist()]
    seen = set(start)
    queue = deque(seen)
    while queue:
        x = queue.popleft()
        for e in steps:
            y = tuple(a + b for a, b in zip(x, e))
            if y in seen or y not in allowed:
                continue
            if y in L:
                return True
            seen.add(y)
            queue.append(y)
    return False


def disconnection_indicator(K_set: SiteSet, window: SiteSet, occupied: SiteSet) -> bool:
    """Whether K_set is cut off from the window's inner boundary by ``occupied``.

    The window's inner boundary stands in for infinity: the indicator is
    true when no vacant nearest-neighbour path inside the window joins
    K_set to it.
    """
    _, inner, _ = boundaries(window)
    if len(K_set.intersection(inner)):
        raise ValueError("K_set meets the window inner boundary")
    if not K_set.issubset(window):
        raise ValueError("K_set is not inside the window")
    return not connected(K_set, inner, window.difference(occupied))


def shell(center, r_in: int, r_out: int) -> SiteSet:
    """Closed sup-norm shell {r_in <= |x - center|_inf <= r_out}."""
    outer = box(center, r_out)
    keep = np.max(np.abs(outer.coords - np.asarray(center)), axis=1) >= r_in
    return SiteSet(outer.coords[keep], d=len(center))


def sort_key_radial(points: np.ndarray) -> np.ndarray:
    """Symmetry-class representative: sorted absolute coordinates (descending)."""
    return -np.sort(-np.abs(np.asarray(points)), axis=-1)


def symmetry_representatives(S: SiteSet, center=None) -> tuple[np.ndarray, np.ndarray]:
    """Representatives of S under the cubic symmetry group about ``center``.

    Returns the representative sites and their multiplicities. Only
    meaningful when S itself is invariant under that group.
    """
    c = np.zeros(S.d, dtype=np.int64) if center is None else np.asarray(center, dtype=np.int64)
    keys = sort_key_radial(S.coords - c)
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    return uniq + c, counts
