"""Empirical and theoretical distortion, local costs and gradients.

The empirical distortion of a codebook ``x`` on observations ``w_1..w_n`` is

    V_n(x) = 1/(2n) sum_i sum_{w in C_i(x)} sum_j Lambda(i - j) |x_j - w|^2

and the theoretical distortion ``V`` replaces the empirical measure by the
data density.  In one dimension the Voronoi cells are intervals between
consecutive midpoints, so every cell integral of a quadratic against a
piecewise-constant density is computed in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import streams
from .errors import DomainError, NonDifferentiableError
from .geometry import (
    Codebook,
    Dataset,
    Density,
    IndexSet,
    NeighborhoodFunction,
    PiecewiseConstant1D,
    _as_points,
    squared_distances,
    winners,
)

# observations closer than this to a float midpoint are assigned by exact
# distance comparison, mirroring ``winners``
_AMBIGUITY = 1e-10


@dataclass(frozen=True)
class Quadrature:
    """How theoretical integrals are evaluated: ``exact1d`` or seeded ``mc``."""

    mode: str = "exact1d"
    samples: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact1d", "mc"):
            raise DomainError(f"unknown quadrature mode {self.mode!r}")
        if self.samples < 2:
            raise DomainError("Monte Carlo quadrature needs at least two samples")

    def as_dict(self) -> dict:
        return {"mode": self.mode, "samples": int(self.samples), "seed": int(self.seed)}


@dataclass(frozen=True)
class DistortionValue:
    value: float
    kind: str
    n_or_quadrature: object
    stderr: float | None = None

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True, eq=False)
class GradientVector:
    """Partial derivatives ``dV/dx_i^l`` as an ``(|I|, d)`` array."""

    values: np.ndarray
    method: str
    h: float | None = None
    stderr: np.ndarray | None = None

    @property
    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check_dims(cb: Codebook, ds: Dataset):
    if cb.dim != ds.dim:
        raise DomainError(f"dimension mismatch: codebook d={cb.dim}, dataset d={ds.dim}")


def _resolve_quadrature(cb: Codebook, dens: Density, quad: Quadrature | None) -> Quadrature:
    if dens.dim != cb.dim:
        raise DomainError(f"dimension mismatch: codebook d={cb.dim}, density d={dens.dim}")
    if quad is None:
        quad = Quadrature("exact1d" if cb.dim == 1 else "mc")
    if quad.mode == "exact1d" and cb.dim != 1:
        raise DomainError("exact quadrature is only available in dimension 1")
    return quad


# -- empirical side ---------------------------------------------------------


def local_costs(cb: Codebook, nf: NeighborhoodFunction, points) -> np.ndarray:
    """``g_x(w) = sum_j Lambda(C_x^{-1}(w) - j) |x_j - w|^2`` for each point."""
    pts = _as_points(points, cb.dim)
    lam = nf.matrix(cb.index_set)
    win = winners(cb, pts)
    return np.sum(lam[win] * squared_distances(cb.centroids, pts), axis=1)


def local_cost(cb: Codebook, nf: NeighborhoodFunction, point) -> float:
    return float(local_costs(cb, nf, point)[0])


def empirical_distortion(cb: Codebook, ds: Dataset, nf: NeighborhoodFunction) -> DistortionValue:
    """``V_n(x)`` summed cell by cell, with the lexicographic tie-break."""
    _check_dims(cb, ds)
    lam = nf.matrix(cb.index_set)
    m = cb.size
    cell_sq = np.zeros((m, m))  # cell_sq[i, j] = sum over C_i of |x_j - w|^2
    obs = ds.observations
    for start in range(0, ds.n, 1 << 15):
        block = obs[start : start + (1 << 15)]
        win = winners(cb, block)
        d2 = squared_distances(cb.centroids, block)
        for j in range(m):
            cell_sq[:, j] += np.bincount(win, weights=d2[:, j], minlength=m)
    value = float(np.sum(lam * cell_sq) / (2.0 * ds.n))
    return DistortionValue(value, "empirical", ds.n)


class SortedSample:
    """One-dimensional sample sorted once, with prefix sums of 1, w and w^2.

    Supports evaluating ``V_n`` for many codebooks in ``O(m log n)`` each; the
    Voronoi assignment agrees observation for observation with
    :func:`~somdistortion.geometry.winners`, including exact ties.
    """

    def __init__(self, values):
        w = np.sort(np.asarray(values, dtype=float).ravel())
        if w.size < 1:
            raise DomainError("a sample needs at least one observation")
        self.values = w
        self.n = w.size
        self.prefix = np.zeros((3, w.size + 1))
        self.prefix[0] = np.arange(w.size + 1)
        self.prefix[1, 1:] = np.cumsum(w)
        self.prefix[2, 1:] = np.cumsum(w * w)
        self.total = self.prefix[:, -1].copy()

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "SortedSample":
        if ds.dim != 1:
            raise DomainError("SortedSample needs one-dimensional data")
        return cls(ds.observations[:, 0])

    def left_stats(self, xa, xb, left_wins) -> np.ndarray:
        """Count, sum and sum of squares of observations sent to ``xa`` rather than ``xb``.

        ``xa < xb`` elementwise; ``left_wins`` says whether ``xa``'s unit has the
        smaller position and therefore wins exact ties.  Returns ``(3, P)``.
        """
        xa = np.atleast_1d(np.asarray(xa, dtype=float))
        xb = np.atleast_1d(np.asarray(xb, dtype=float))
        left_wins = np.broadcast_to(np.asarray(left_wins, dtype=bool), xa.shape)
        mid = 0.5 * (xa + xb)
        lo = np.searchsorted(self.values, mid - _AMBIGUITY, side="left")
        hi = np.searchsorted(self.values, mid + _AMBIGUITY, side="right")
        stats = self.prefix[:, lo]
        for p in np.nonzero(hi > lo)[0]:
            near = self.values[lo[p] : hi[p]]
            da = (xa[p] - near) ** 2
            db = (xb[p] - near) ** 2
            sel = near[(da < db) | ((da == db) & left_wins[p])]
            stats[:, p] += (sel.size, sel.sum(), np.sum(sel * sel))
        return stats


def distortion_from_cell_stats(x: np.ndarray, stats: np.ndarray, lam: np.ndarray, n: int) -> np.ndarray:
    """``V_n`` from per-cell count/sum/square-sum.

    ``x`` is ``(P, m)``, ``stats`` is ``(3, P, m)`` with the cell of unit ``k`` in
    column ``k``.  Uses ``sum_k Lambda_kj (N_k x_j^2 - 2 x_j S_k + Q_k)``.
    """
    cnt, s1, s2 = stats
    tot = np.sum(x * x * (cnt @ lam), axis=-1)
    tot -= 2.0 * np.sum(x * (s1 @ lam), axis=-1)
    tot += s2 @ lam.sum(axis=1)
    return tot / (2.0 * n)


def empirical_distortion_1d_many(
    x, sample: SortedSample, nf: NeighborhoodFunction, index_set: IndexSet | None = None
) -> np.ndarray:
    """``V_n`` for a batch of 1-D codebooks ``x`` of shape ``(P, m)``.

    ``index_set`` defaults to a string of ``m`` units.  Rows with (nearly)
    coincident centroids fall back to direct evaluation.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p_count, m = x.shape
    index_set = index_set if index_set is not None else IndexSet.string(m)
    lam = nf.matrix(index_set)
    perm = np.argsort(x, axis=1, kind="stable")
    xs = np.take_along_axis(x, perm, axis=1)
    gaps = np.diff(xs, axis=1)
    slow = np.any(gaps < 1e-6, axis=1) if m > 1 else np.zeros(p_count, dtype=bool)
    fast = np.nonzero(~slow)[0]

    out = np.empty(p_count)
    if fast.size:
        xf, pf, sf = x[fast], perm[fast], xs[fast]
        bounds = np.zeros((3, fast.size, m + 1))
        bounds[:, :, m] = sample.total[:, None]
        rows = np.arange(fast.size)
        for s in range(m - 1):
            bounds[:, :, s + 1] = sample.left_stats(sf[:, s], sf[:, s + 1], pf[:, s] < pf[:, s + 1])
        slot = np.diff(bounds, axis=2)
        cells = np.empty_like(slot)
        for s in range(m):
            cells[:, rows, pf[:, s]] = slot[:, :, s]
        out[fast] = distortion_from_cell_stats(xf, cells, lam, sample.n)
    if slow.any():
        ds = Dataset.from_1d(sample.values)
        for p in np.nonzero(slow)[0]:
            cb = Codebook(index_set, x[p].reshape(-1, 1))
            out[p] = empirical_distortion(cb, ds, nf).value
    return out


# -- theoretical side, exact in one dimension ------------------------------


def _axis(dens: Density) -> PiecewiseConstant1D:
    if dens.dim != 1:
        raise DomainError("exact integration needs a one-dimensional density")
    return dens.axes[0]


def _sorted_cells(x: np.ndarray):
    """Sort order, sorted values and cell boundaries of a 1-D codebook."""
    perm = np.argsort(x, kind="stable")
    xs = x[perm]
    if np.any(np.diff(xs) <= 0):
        raise DomainError("theoretical quantities need pairwise distinct centroids")
    edges = np.concatenate([[0.0], 0.5 * (xs[:-1] + xs[1:]), [1.0]])
    return perm, xs, edges


def cell_moments_1d(x: np.ndarray, axis: PiecewiseConstant1D) -> np.ndarray:
    """``(3, m)``: mass, first and second moment of ``P`` on each unit's cell."""
    perm, _, edges = _sorted_cells(x)
    m0, m1, m2 = axis.moments(edges[:-1], edges[1:])
    out = np.empty((3, x.size))
    out[:, perm] = np.vstack([m0, m1, m2])
    return out


def exact_distortion_1d(x: np.ndarray, axis: PiecewiseConstant1D, lam: np.ndarray) -> float:
    mom = cell_moments_1d(x, axis)
    return float(distortion_from_cell_stats(x[None, :], mom[:, None, :], lam, 1)[0])


def exact_residual_1d(x: np.ndarray, axis: PiecewiseConstant1D, lam: np.ndarray) -> np.ndarray:
    """``r_i = sum_k Lambda(i - k) int_{C_k} (x_i - w) dP``."""
    m0, m1, _ = cell_moments_1d(x, axis)
    return x * (lam @ m0) - lam @ m1


def exact_gradient_1d(x: np.ndarray, axis: PiecewiseConstant1D, lam: np.ndarray) -> np.ndarray:
    """
    Exact ``dV/dx_i`` of the 1-D theoretical distortion.

    The derivative is the SOM residual plus one term per Voronoi boundary.
    Moving the boundary ``m`` between sorted neighbours ``a`` (left) and ``b``
    (right) by ``dm`` transfers mass ``f(m) dm`` from cell b to cell a, which
    changes ``V`` by ``1/2 sum_j (Lambda(a-j) - Lambda(b-j)) (x_j - m)^2 f(m) dm``.
    Since ``dm/dx_a = dm/dx_b = 1/2``, both ``a`` and ``b`` receive

        1/4 * sum_j (Lambda(a - j) - Lambda(b - j)) * (x_j - m)^2 * f(m).

    This is the degenerate (point-measure) form of the hyperplane integral with
    normal ``(x_i - x_k)/|x_i - x_k|``: for the 3-unit string under
    ``threshold:1`` it yields ``-1/4 (x_3 - (x_1+x_2)/2)^2 f`` on unit 1.
    The formula is only valid where ``f`` is continuous at every boundary.
    """
    perm, xs, edges = _sorted_cells(x)
    mids = edges[1:-1]
    if np.any(np.isin(mids, axis.interior_breakpoints)):
        raise NonDifferentiableError("a Voronoi boundary sits on a density breakpoint")
    grad = exact_residual_1d(x, axis, lam)
    if mids.size:
        a, b = perm[:-1], perm[1:]
        sq = (x[None, :] - mids[:, None]) ** 2  # (boundaries, m)
        term = 0.25 * np.sum((lam[a] - lam[b]) * sq, axis=1) * axis.pdf(mids)
        np.add.at(grad, a, term)
        np.add.at(grad, b, term)
    return grad


# -- theoretical side, Monte Carlo -----------------------------------------


def _mc_chunks(dens: Density, quad: Quadrature):
    for c, size in streams.chunk_sizes(quad.samples):
        yield dens.sample(size, streams.generator(quad.seed, "mc", c))


def _mc_local_costs(cb: Codebook, lam: np.ndarray, points: np.ndarray) -> np.ndarray:
    win = winners(cb, points)
    return np.sum(lam[win] * squared_distances(cb.centroids, points), axis=1)


def _mean_and_se(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = values.shape[0]
    return values.mean(axis=0), values.std(axis=0, ddof=1) / np.sqrt(n)


# -- public theoretical operations ------------------------------------------


def theoretical_distortion(
    cb: Codebook, dens: Density, nf: NeighborhoodFunction, quad: Quadrature | None = None
) -> DistortionValue:
    """``V(x) = 1/2 sum_{i,j} Lambda(i-j) int_{C_i(x)} |x_j - w|^2 dP``."""
    quad = _resolve_quadrature(cb, dens, quad)
    lam = nf.matrix(cb.index_set)
    if quad.mode == "exact1d":
        if not cb.is_distinct():
            raise DomainError("exact mode needs pairwise distinct centroids")
        return DistortionValue(exact_distortion_1d(cb.centroids[:, 0], _axis(dens), lam), "theoretical", quad.as_dict())
    g = np.concatenate([_mc_local_costs(cb, lam, pts) for pts in _mc_chunks(dens, quad)])
    mean, se = _mean_and_se(g)
    return DistortionValue(float(mean) / 2.0, "theoretical", quad.as_dict(), float(se) / 2.0)


def theoretical_gradient_1d(cb: Codebook, dens: Density, nf: NeighborhoodFunction) -> GradientVector:
    if cb.dim != 1 or dens.dim != 1:
        raise DomainError("the exact gradient is only available in dimension 1")
    if not cb.is_distinct():
        raise NonDifferentiableError("collapsed centroids: V is not differentiable here")
    g = exact_gradient_1d(cb.centroids[:, 0], _axis(dens), nf.matrix(cb.index_set))
    return GradientVector(g.reshape(-1, 1), "exact_1d")


def _check_perturbation(c: np.ndarray, i: int, l: int, h: float):
    if c[i, l] - h < 0.0 or c[i, l] + h > 1.0:
        raise DomainError(f"perturbation of unit {i} axis {l} by {h} leaves [0, 1]")
    others = np.delete(c[:, l], i)
    if others.size and np.min(np.abs(others - c[i, l])) <= h:
        raise DomainError(f"perturbation of unit {i} axis {l} by {h} makes coordinates collide")


def theoretical_gradient_fd(
    cb: Codebook, dens: Density, nf: NeighborhoodFunction, h: float = 1e-5, quad: Quadrature | None = None
) -> GradientVector:
    """Central differences ``(V(x + h e) - V(x - h e)) / 2h`` of the theoretical distortion.

    Monte Carlo mode reuses the same draws on both sides (common random
    numbers) and reports the standard error of each paired difference.
    """
    if not h > 0:
        raise DomainError("finite-difference step must be positive")
    quad = _resolve_quadrature(cb, dens, quad)
    lam = nf.matrix(cb.index_set)
    c = cb.centroids
    m, d = c.shape
    for i in range(m):
        for l in range(d):
            _check_perturbation(c, i, l, h)

    def shifted(i, l, sign):
        y = c.copy()
        y[i, l] += sign * h
        return y

    if quad.mode == "exact1d":
        axis = _axis(dens)
        grad = np.empty((m, d))
        for i in range(m):
            hi = exact_distortion_1d(shifted(i, 0, +1)[:, 0], axis, lam)
            lo = exact_distortion_1d(shifted(i, 0, -1)[:, 0], axis, lam)
            grad[i, 0] = (hi - lo) / (2.0 * h)
        return GradientVector(grad, f"finite_difference({h:g})", h)

    diffs = {(i, l): [] for i in range(m) for l in range(d)}
    for pts in _mc_chunks(dens, quad):
        for (i, l), acc in diffs.items():
            up = Codebook(cb.index_set, shifted(i, l, +1))
            down = Codebook(cb.index_set, shifted(i, l, -1))
            acc.append((_mc_local_costs(up, lam, pts) - _mc_local_costs(down, lam, pts)) / (4.0 * h))
    grad = np.empty((m, d))
    se = np.empty((m, d))
    for (i, l), acc in diffs.items():
        mean, err = _mean_and_se(np.concatenate(acc))
        grad[i, l], se[i, l] = mean, err
    return GradientVector(grad, f"finite_difference({h:g})", h, se)


def som_equilibrium_residual(
    cb: Codebook, dens: Density, nf: NeighborhoodFunction, quad: Quadrature | None = None
) -> np.ndarray:
    """``(|I|, d)`` residual ``sum_k Lambda(i-k) int_{C_k} (x_i - w) dP``; zero at SOM equilibria."""
    quad = _resolve_quadrature(cb, dens, quad)
    lam = nf.matrix(cb.index_set)
    if quad.mode == "exact1d":
        if not cb.is_distinct():
            raise DomainError("exact mode needs pairwise distinct centroids")
        return exact_residual_1d(cb.centroids[:, 0], _axis(dens), lam).reshape(-1, 1)
    m, d = cb.centroids.shape
    mass = np.zeros(m)
    first = np.zeros((m, d))
    total = 0
    for pts in _mc_chunks(dens, quad):
        win = winners(cb, pts)
        mass += np.bincount(win, minlength=m)
        for l in range(d):
            first[:, l] += np.bincount(win, weights=pts[:, l], minlength=m)
        total += pts.shape[0]
    mass /= total
    first /= total
    return cb.centroids * (lam @ mass)[:, None] - lam @ first
