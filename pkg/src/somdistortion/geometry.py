"""Index lattices, neighbourhood kernels, codebooks, data and densities.

Units are indexed by a rectangular lattice ``I`` of ``Z^e``.  Everywhere in the
package a unit is addressed by its *position*, i.e. its rank in the
lexicographic enumeration of ``I``; because positions are assigned in
lexicographic order, "smallest position" and "lexicographically smallest
index" coincide, which is what the Voronoi tie-break relies on.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DomainError

# winners are computed on blocks of this many points to bound memory
_BLOCK = 1 << 15


@dataclass(frozen=True)
class IndexSet:
    """Rectangular lattice ``{0..n_1-1} x ... x {0..n_e-1}`` of unit indices."""

    lattice_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(v) for v in np.atleast_1d(self.lattice_dims))
        if len(dims) < 1 or any(v < 1 for v in dims):
            raise DomainError(f"lattice_dims must be positive integers, got {self.lattice_dims!r}")
        object.__setattr__(self, "lattice_dims", dims)

    @classmethod
    def string(cls, m: int) -> "IndexSet":
        """One-dimensional lattice of ``m`` units (a Kohonen string)."""
        return cls((m,))

    @property
    def e(self) -> int:
        return len(self.lattice_dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.lattice_dims))

    def __len__(self) -> int:
        return self.size

    @cached_property
    def indices(self) -> np.ndarray:
        """``(|I|, e)`` integer array, rows in lexicographic order."""
        idx = np.array(list(itertools.product(*(range(v) for v in self.lattice_dims))), dtype=int)
        idx.setflags(write=False)
        return idx

    def position(self, index: Sequence[int]) -> int:
        index = tuple(int(v) for v in np.atleast_1d(index))
        if len(index) != self.e or any(not 0 <= v < n for v, n in zip(index, self.lattice_dims)):
            raise DomainError(f"{index!r} is not an index of lattice {self.lattice_dims}")
        return int(np.ravel_multi_index(index, self.lattice_dims))

    def contains_difference(self, k: np.ndarray) -> bool:
        k = np.atleast_1d(np.asarray(k))
        return k.shape == (self.e,) and bool(np.all(np.abs(k) <= np.array(self.lattice_dims) - 1))

    @cached_property
    def differences(self) -> np.ndarray:
        """``(|I|, |I|, e)`` array holding ``i - j`` for every pair of positions."""
        idx = self.indices
        return idx[:, None, :] - idx[None, :, :]


_KINDS = ("threshold", "gaussian")
_NORMS = ("sup", "l1", "l2")


@dataclass(frozen=True)
class NeighborhoodFunction:
    """Symmetric kernel ``Lambda`` on index differences with ``Lambda(0) = 1``.

    ``threshold`` returns 1 when ``norm(k) <= radius`` and 0 otherwise; the
    lattice norm defaults to the sup-norm, so radius 1 on a 2-D grid includes
    the diagonal neighbours.  ``gaussian`` returns ``exp(-|k|^2 / (2 sigma^2))``.
    """

    kind: str
    parameter: float
    norm: str = "sup"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown neighbourhood kind {self.kind!r}")
        if self.norm not in _NORMS:
            raise DomainError(f"unknown lattice norm {self.norm!r}")
        p = float(self.parameter)
        if self.kind == "threshold" and (p < 0 or p != int(p)):
            raise DomainError("threshold radius must be a nonnegative integer")
        if self.kind == "gaussian" and not p > 0:
            raise DomainError("gaussian sigma must be positive")
        object.__setattr__(self, "parameter", int(p) if self.kind == "threshold" else p)

    @classmethod
    def threshold(cls, radius: int, norm: str = "sup") -> "NeighborhoodFunction":
        return cls("threshold", radius, norm)

    @classmethod
    def gaussian(cls, sigma: float) -> "NeighborhoodFunction":
        return cls("gaussian", sigma)

    @classmethod
    def parse(cls, text: str) -> "NeighborhoodFunction":
        """Parse ``threshold:R`` or ``gaussian:SIGMA``."""
        kind, _, value = text.partition(":")
        if not value:
            raise DomainError(f"neighbourhood spec must look like 'threshold:1', got {text!r}")
        try:
            num = float(value)
        except ValueError:
            raise DomainError(f"bad neighbourhood parameter in {text!r}") from None
        return cls(kind.strip(), num)

    def __str__(self) -> str:
        return f"{self.kind}:{self.parameter:g}"

    def _evaluate(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        if self.kind == "gaussian":
            return np.exp(-np.sum(k * k, axis=-1) / (2.0 * self.parameter**2))
        if self.norm == "sup":
            size = np.max(np.abs(k), axis=-1)
        elif self.norm == "l1":
            size = np.sum(np.abs(k), axis=-1)
        else:
            size = np.sqrt(np.sum(k * k, axis=-1))
        return (size <= self.parameter).astype(float)

    def value(self, k, index_set: IndexSet | None = None) -> float:
        k = np.atleast_1d(np.asarray(k))
        if not np.issubdtype(k.dtype, np.integer):
            if not np.all(k == np.round(k)):
                raise DomainError(f"difference vector {k!r} is not integral")
            k = k.astype(int)
        if index_set is not None and not index_set.contains_difference(k):
            raise DomainError(f"{k!r} is not in I - I for lattice {index_set.lattice_dims}")
        return float(self._evaluate(k))

    def matrix(self, index_set: IndexSet) -> np.ndarray:
        """``(|I|, |I|)`` matrix ``Lambda(i - j)`` over unit positions."""
        return self._evaluate(index_set.differences)


def neighborhood_value(nf: NeighborhoodFunction, k, index_set: IndexSet | None = None) -> float:
    """``Lambda(k)``; ``k`` is checked against ``I - I`` when ``index_set`` is given."""
    return nf.value(k, index_set)


def _as_points(points, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim in (None, 1) else arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DomainError(f"expected a 2-D array of points, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise DomainError(f"dimension mismatch: expected d={dim}, got {arr.shape[1]}")
    return arr


def _check_unit_cube(arr: np.ndarray, what: str):
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{what} must lie in the unit cube [0, 1]^d")


@dataclass(frozen=True, eq=False)
class Codebook:
    """Centroids ``x_i`` in ``[0,1]^d``, one row per unit position."""

    index_set: IndexSet
    centroids: np.ndarray

    def __post_init__(self):
        c = np.array(self.centroids, dtype=float)
        if c.ndim == 1:
            c = c.reshape(-1, 1)
        if c.ndim != 2 or c.shape[0] != self.index_set.size:
            raise DomainError(
                f"need {self.index_set.size} centroids for lattice {self.index_set.lattice_dims}, "
                f"got array of shape {np.shape(self.centroids)}"
            )
        _check_unit_cube(c, "centroids")
        if self.index_set.e > c.shape[1]:
            warnings.warn(
                f"lattice dimension e={self.index_set.e} exceeds data dimension d={c.shape[1]}",
                stacklevel=3,
            )
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @classmethod
    def string(cls, values: Sequence[float]) -> "Codebook":
        """1-D codebook on a string lattice, one centroid per value."""
        values = np.asarray(values, dtype=float).ravel()
        return cls(IndexSet.string(values.size), values.reshape(-1, 1))

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    def replace(self, centroids) -> "Codebook":
        return Codebook(self.index_set, centroids)

    def is_distinct(self) -> bool:
        """Membership in ``D_I``: coordinates pairwise distinct on every axis."""
        if self.size < 2:
            return True
        s = np.sort(self.centroids, axis=0)
        return bool(np.all(np.diff(s, axis=0) > 0))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.index_set == other.index_set and np.array_equal(self.centroids, other.centroids)

    def __repr__(self) -> str:
        return f"Codebook(lattice={self.index_set.lattice_dims}, centroids={self.centroids.tolist()})"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered observations in ``[0,1]^d``."""

    observations: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        obs = _as_points(self.observations)
        if obs.shape[0] < 1:
            raise DomainError("a dataset needs at least one observation")
        _check_unit_cube(obs, "observations")
        obs = np.array(obs, dtype=float)
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @classmethod
    def from_1d(cls, values, seed: int | None = None) -> "Dataset":
        return cls(np.asarray(values, dtype=float).reshape(-1, 1), seed)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.observations.shape[1]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True, eq=False)
class PiecewiseConstant1D:
    """Piecewise-constant density on ``[0, 1]``."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.breakpoints, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if t.size != v.size + 1 or t.size < 2:
            raise DomainError("need len(breakpoints) == len(values) + 1 >= 2")
        if t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0):
            raise DomainError("breakpoints must increase strictly from 0 to 1")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise DomainError("density values must be finite and nonnegative")
        mass = float(np.sum(v * np.diff(t)))
        if abs(mass - 1.0) > 1e-9:
            raise DomainError(f"density integrates to {mass!r}, not 1")
        object.__setattr__(self, "breakpoints", t)
        object.__setattr__(self, "values", v)
        cdf = np.concatenate([[0.0], np.cumsum(v * np.diff(t))])
        object.__setattr__(self, "_cdf", cdf)

    def pdf(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        piece = np.clip(np.searchsorted(self.breakpoints, w, side="right") - 1, 0, self.values.size - 1)
        out = self.values[piece]
        return np.where((w < 0) | (w > 1), 0.0, out)

    def moments(self, a, b) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integrals of ``f``, ``w f`` and ``w^2 f`` over ``[a, b]`` (vectorised)."""
        a = np.asarray(a, dtype=float)[..., None]
        b = np.asarray(b, dtype=float)[..., None]
        lo = np.maximum(a, self.breakpoints[:-1])
        hi = np.maximum(np.minimum(b, self.breakpoints[1:]), lo)
        v = self.values
        m0 = np.sum(v * (hi - lo), axis=-1)
        m1 = np.sum(v * (hi**2 - lo**2), axis=-1) / 2.0
        m2 = np.sum(v * (hi**3 - lo**3), axis=-1) / 3.0
        return m0, m1, m2

    def ppf(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        piece = np.clip(np.searchsorted(self._cdf, u, side="right") - 1, 0, self.values.size - 1)
        # zero-density pieces have zero cdf width and are never selected
        dens = self.values[piece]
        safe = np.where(dens > 0, dens, 1.0)
        out = self.breakpoints[piece] + (u - self._cdf[piece]) / safe
        return np.clip(out, 0.0, 1.0)

    @property
    def bound(self) -> float:
        return float(self.values.max())

    @property
    def interior_breakpoints(self) -> np.ndarray:
        return self.breakpoints[1:-1]

    @property
    def is_uniform(self) -> bool:
        return self.values.size == 1


@dataclass(frozen=True, eq=False)
class Density:
    """Product density ``f(w) = prod_l f_l(w^l)`` with piecewise-constant factors."""

    axes: tuple[PiecewiseConstant1D, ...]

    def __post_init__(self):
        if len(self.axes) < 1:
            raise DomainError("a density needs at least one axis")
        object.__setattr__(self, "axes", tuple(self.axes))

    @classmethod
    def uniform(cls, dim: int = 1) -> "Density":
        return cls(tuple(PiecewiseConstant1D([0.0, 1.0], [1.0]) for _ in range(dim)))

    @classmethod
    def piecewise(cls, breakpoints, values) -> "Density":
        """One-dimensional piecewise-constant density."""
        return cls((PiecewiseConstant1D(breakpoints, values),))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def kind(self) -> str:
        return "uniform" if all(ax.is_uniform for ax in self.axes) else "piecewise_constant"

    @property
    def bound(self) -> float:
        return float(np.prod([ax.bound for ax in self.axes]))

    def pdf(self, points) -> np.ndarray:
        pts = _as_points(points, self.dim)
        out = np.ones(pts.shape[0])
        for l, ax in enumerate(self.axes):
            out *= ax.pdf(pts[:, l])
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``(n, d)`` i.i.d. draws by per-axis inverse transform."""
        u = rng.random((int(n), self.dim))
        return np.column_stack([ax.ppf(u[:, l]) for l, ax in enumerate(self.axes)])


def squared_distances(centroids: np.ndarray, points: np.ndarray) -> np.ndarray:
    """``(n, |I|)`` matrix of squared Euclidean distances."""
    diff = points[:, None, :] - centroids[None, :, :]
    return np.sum(diff * diff, axis=-1)


def winners(cb: Codebook, points) -> np.ndarray:
    """Winning unit position for every point, ties to the smallest position."""
    pts = _as_points(points, cb.dim)
    out = np.empty(pts.shape[0], dtype=int)
    for start in range(0, pts.shape[0], _BLOCK):
        block = pts[start : start + _BLOCK]
        # argmin returns the first minimum: exact ties go to the smallest position
        out[start : start + _BLOCK] = np.argmin(squared_distances(cb.centroids, block), axis=1)
    return out


def assign_winner(cb: Codebook, point) -> int:
    """Position of the centroid nearest to ``point`` (exact ties: smallest position)."""
    pts = _as_points(point, cb.dim)
    if pts.shape[0] != 1:
        raise DomainError("assign_winner takes a single point; use winners() for many")
    _check_unit_cube(pts, "point")
    return int(winners(cb, pts)[0])


def voronoi_partition(cb: Codebook, ds: Dataset) -> dict[int, list[int]]:
    """Map each unit position to the row numbers of the observations in its cell."""
    if ds.dim != cb.dim:
        raise DomainError(f"dimension mismatch: codebook d={cb.dim}, dataset d={ds.dim}")
    w = winners(cb, ds.observations)
    cells: dict[int, list[int]] = {i: [] for i in range(cb.size)}
    for row, i in enumerate(w.tolist()):
        cells[i].append(row)
    return cells


def min_separation(cb: Codebook) -> float:
    """Smallest pairwise Euclidean distance between centroids."""
    if cb.size < 2:
        raise DomainError("min_separation needs at least two centroids")
    return float(pdist(cb.centroids).min())


def in_separated_set(cb: Codebook, delta: float) -> bool:
    """Membership in ``D_I^delta``."""
    return cb.size < 2 or min_separation(cb) >= delta


def mediator_midpoints_1d(cb: Codebook) -> np.ndarray:
    """Sorted Voronoi boundaries of a 1-D codebook with distinct centroids."""
    if cb.dim != 1:
        raise DomainError("mediator_midpoints_1d needs a one-dimensional codebook")
    if not cb.is_distinct():
        raise DomainError("centroids must be pairwise distinct")
    x = np.sort(cb.centroids[:, 0])
    return 0.5 * (x[:-1] + x[1:])
