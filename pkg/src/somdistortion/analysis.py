"""Numerical experiments on the empirical distortion of 1-D Kohonen strings.

The exhaustive scan evaluates ``V_n`` on every strictly ordered tuple of a
regular grid.  Observations are sorted once; for every pair of grid points the
count, sum and sum of squares of the observations falling on the left of
their midpoint are tabulated, so a candidate costs ``O(m |I|)`` arithmetic.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter

from . import streams
from .distortion import (
    SortedSample,
    distortion_from_cell_stats,
    empirical_distortion,
    empirical_distortion_1d_many,
    exact_distortion_1d,
    _axis,
)
from .errors import DomainError
from .geometry import (
    Codebook,
    Dataset,
    Density,
    IndexSet,
    NeighborhoodFunction,
    in_separated_set,
    mediator_midpoints_1d,
    min_separation,
    winners,
)
from .som import minimize_theoretical

#: two scan values closer than this (in V_n units) are treated as a tie
TIE_TOL = 1e-12

# candidates per vectorised block; small enough to stay in cache
_BLOCK = 8192


def scan_grid(step: float) -> np.ndarray:
    """The grid ``{0, step, 2 step, ..., 1}``; ``1/step`` must be an integer."""
    if not step > 0:
        raise DomainError("step must be positive")
    k = int(round(1.0 / step))
    if k < 1 or abs(k * step - 1.0) > 1e-9:
        raise DomainError(f"1/step must be an integer, got step={step!r}")
    return np.arange(k + 1) / k


@dataclass(frozen=True, eq=False)
class ScanResult:
    best_codebook: Codebook
    best_value: float
    step: float
    candidates_evaluated: int
    ties: list[Codebook]
    witnesses: list[Codebook] = field(default_factory=list)
    witness_values: list[float] = field(default_factory=list)
    within: float = 0.0


@dataclass(frozen=True, eq=False)
class AlmostMinimizerSet:
    """Codebooks with ``V_n(x) < inf V_n + tolerance`` (ties included when tolerance is 0)."""

    tolerance: float
    best_value: float
    witnesses: list[Codebook]
    values: list[float]


# -- exhaustive scan ----------------------------------------------------------------


class _ScanContext:
    def __init__(self, grid, table, lam, n, m, total, keep):
        self.grid = grid
        self.table = table
        self.lam = lam
        self.n = n
        self.m = m
        self.total = total
        self.keep = keep
        self.row_sums = lam.sum(axis=1)
        g = grid.size
        self.pair_a, self.pair_b = np.triu_indices(g, 1)
        self.pair_start = np.searchsorted(self.pair_a, np.arange(g + 1), side="left")


def _boundary_table(sample: SortedSample, grid: np.ndarray) -> np.ndarray:
    g = grid.size
    table = np.zeros((3, g, g))
    a, b = np.triu_indices(g, 1)
    # ordered candidates put the smaller position on the left, so the left unit wins ties
    table[:, a, b] = sample.left_stats(grid[a], grid[b], True)
    return table


def _evaluate_block(ctx: _ScanContext, prefix: tuple[int, ...], a: np.ndarray, b: np.ndarray):
    """Values of all candidates ``prefix + (a_p, b_p)``; returns ``(values, idx)``."""
    m, t, lam = ctx.m, ctx.table, ctx.lam
    p = a.size
    cols = [j for j in prefix] + [a, b]
    # left-of-boundary statistics; boundaries inside the prefix are scalars
    left = [np.zeros((3, 1))]
    for k in range(m - 1):
        lo, hi = cols[k], cols[k + 1]
        left.append(t[:, lo, hi][:, None] if np.isscalar(hi) else t[:, lo, hi])
    left.append(ctx.total[:, None])
    cells = np.empty((3, m, p))
    x = np.empty((m, p))
    for k in range(m):
        cells[:, k] = left[k + 1] - left[k]
        x[k] = ctx.grid[cols[k]]
    tot = np.sum(x * x * (lam @ cells[0]), axis=0)
    tot -= 2.0 * np.sum(x * (lam @ cells[1]), axis=0)
    tot += ctx.row_sums @ cells[2]
    idx = np.empty((m, p), dtype=np.int64)
    for k in range(m):
        idx[k] = cols[k]
    return tot / (2.0 * ctx.n), idx


def _scan_task(ctx: _ScanContext, firsts: list[int]):
    """Scan every candidate whose first grid index is in ``firsts``."""
    best = np.inf
    kept_idx, kept_val = [], []
    count = 0
    g = ctx.grid.size

    def consume(values, idx):
        nonlocal best, count
        count += values.size
        if values.size == 0:
            return
        best = min(best, float(values.min()))
        sel = values <= best + ctx.keep
        if sel.any():
            kept_idx.append(idx[:, sel])
            kept_val.append(values[sel])

    for j0 in firsts:
        if ctx.m == 2:
            s, e = ctx.pair_start[j0], ctx.pair_start[j0 + 1]
            consume(*_evaluate_block(ctx, (), ctx.pair_a[s:e], ctx.pair_b[s:e]))
            continue
        for rest in itertools.combinations(range(j0 + 1, g), ctx.m - 3):
            prefix = (j0,) + rest
            s = ctx.pair_start[prefix[-1] + 1]
            for c in range(s, ctx.pair_a.size, _BLOCK):
                e = min(c + _BLOCK, ctx.pair_a.size)
                consume(*_evaluate_block(ctx, prefix, ctx.pair_a[c:e], ctx.pair_b[c:e]))
    if not kept_val:
        return best, np.zeros((ctx.m, 0), dtype=int), np.zeros(0), count
    idx = np.concatenate(kept_idx, axis=1)
    val = np.concatenate(kept_val)
    sel = val <= best + ctx.keep
    return best, idx[:, sel], val[sel], count


def _run_scan_task(args):
    return _scan_task(*args)


def exhaustive_scan_1d(
    ds: Dataset,
    nf: NeighborhoodFunction,
    m: int,
    step: float,
    within: float = 0.0,
    workers: int = 1,
) -> ScanResult:
    """Global minimum of ``V_n`` over strictly ordered ``m``-tuples of the grid.

    Candidates within ``TIE_TOL`` of the minimum are reported as ties, in
    lexicographic order, and the first tie is the reported best codebook;
    candidates with ``V_n < min + within`` are additionally reported as
    witnesses.  The first grid coordinate is split across ``workers``
    processes and partial results are merged by value, then lexicographic
    order, so the answer does not depend on the worker count.
    """
    if ds.dim != 1:
        raise DomainError("the exhaustive scan is one-dimensional")
    if m < 1:
        raise DomainError("need at least one centroid")
    if within < 0:
        raise DomainError("within must be nonnegative")
    grid = scan_grid(step)
    g = grid.size
    if g < m:
        raise DomainError(f"grid of {g} points cannot hold {m} ordered centroids")
    sample = SortedSample.from_dataset(ds)
    index_set = IndexSet.string(m)
    lam = nf.matrix(index_set)
    keep = max(within, TIE_TOL)
    expected = math.comb(g, m)

    if m == 1:
        stats = np.broadcast_to(sample.total[:, None, None], (3, g, 1))
        values = distortion_from_cell_stats(grid[:, None], stats, lam, sample.n)
        best = float(values.min())
        sel = values <= best + keep
        idx, val, count = np.arange(g)[None, sel], values[sel], g
    else:
        ctx = _ScanContext(grid, _boundary_table(sample, grid), lam, sample.n, m, sample.total, keep)
        firsts = list(range(g - m + 1))
        if workers > 1:
            parts = [firsts[k::workers] for k in range(workers)]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_scan_task, [(ctx, part) for part in parts]))
        else:
            results = [_scan_task(ctx, firsts)]
        best = min(r[0] for r in results)
        idx = np.concatenate([r[1] for r in results], axis=1)
        val = np.concatenate([r[2] for r in results])
        count = sum(r[3] for r in results)
        sel = val <= best + keep
        idx, val = idx[:, sel], val[sel]
    if count != expected:
        raise AssertionError(f"scan evaluated {count} candidates, expected {expected}")

    order = np.lexsort(tuple(idx[::-1]))
    idx, val = idx[:, order], val[order]
    tie = val <= best + TIE_TOL
    wit = tie | (val < best + within)
    to_cb = [Codebook(index_set, grid[idx[:, k]].reshape(-1, 1)) for k in range(idx.shape[1])]
    ties = [cb for cb, t in zip(to_cb, tie) if t]
    # values inside TIE_TOL are equal, so the lexicographically first tie is reported
    return ScanResult(
        best_codebook=ties[0],
        best_value=float(best),
        step=float(step),
        candidates_evaluated=int(count),
        ties=ties,
        witnesses=[cb for cb, w in zip(to_cb, wit) if w],
        witness_values=val[wit].tolist(),
        within=float(within),
    )


def almost_minimizers(scan: ScanResult) -> AlmostMinimizerSet:
    return AlmostMinimizerSet(scan.within, scan.best_value, scan.witnesses, scan.witness_values)


# -- surface slices and discontinuities ----------------------------------------


@dataclass(frozen=True, eq=False)
class SurfaceSlice:
    """Level ``z = n V_n`` while one or two centroids sweep a window."""

    varied_indices: tuple[int, ...]
    axes: tuple[np.ndarray, ...]
    z: np.ndarray
    base: Codebook
    n: int

    def rows(self) -> np.ndarray:
        """``(points, len(varied) + 1)`` table matching the CSV layout."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([g.ravel() for g in mesh] + [self.z.ravel()])


def surface_slice(
    ds: Dataset,
    nf: NeighborhoodFunction,
    base: Codebook,
    vary,
    window: float = 0.05,
    step: float = 0.001,
) -> SurfaceSlice:
    if base.dim != 1 or ds.dim != 1:
        raise DomainError("surface slices are one-dimensional")
    vary = (int(vary),) if np.isscalar(vary) else tuple(int(v) for v in vary)
    if not 1 <= len(vary) <= 2 or len(set(vary)) != len(vary) or any(not 0 <= v < base.size for v in vary):
        raise DomainError(f"vary must name one or two distinct units, got {vary!r}")
    if not window > 0 or not step > 0:
        raise DomainError("window and step must be positive")
    k = int(round(window / step))
    offsets = step * np.arange(-k, k + 1)
    axes = []
    for v in vary:
        ax = base.centroids[v, 0] + offsets
        if ax[0] < -1e-12 or ax[-1] > 1 + 1e-12:
            raise DomainError(f"window around unit {v} leaves [0, 1]")
        axes.append(np.clip(ax, 0.0, 1.0))
    mesh = np.meshgrid(*axes, indexing="ij")
    x = np.repeat(base.centroids[:, 0][None, :], mesh[0].size, axis=0)
    for v, g in zip(vary, mesh):
        x[:, v] = g.ravel()
    sample = SortedSample.from_dataset(ds)
    z = ds.n * empirical_distortion_1d_many(x, sample, nf, base.index_set)
    return SurfaceSlice(vary, tuple(axes), z.reshape(mesh[0].shape), base, ds.n)


def discontinuity_report(cb: Codebook, ds: Dataset, step: float) -> list[tuple[float, float, float]]:
    """``(observation, midpoint, gap)`` for every observation within ``step`` of a boundary."""
    if cb.dim != 1 or ds.dim != 1:
        raise DomainError("discontinuity_report is one-dimensional")
    w = np.sort(ds.observations[:, 0])
    hits = []
    for mid in mediator_midpoints_1d(cb):
        lo = np.searchsorted(w, mid - step, side="left")
        hi = np.searchsorted(w, mid + step, side="right")
        for obs in w[lo:hi]:
            gap = abs(float(obs) - float(mid))
            if gap <= step:
                hits.append((float(obs), float(mid), gap))
    return hits


@dataclass(frozen=True)
class JumpSummary:
    """Jumps of a 1-D slice compared with observation/midpoint crossings."""

    n: int
    jump_intervals: list[int]
    magnitudes: list[float]
    crossing_intervals: list[int]
    unmatched: list[int]
    length: float

    @property
    def density(self) -> float:
        return len(self.jump_intervals) / self.length

    @property
    def mean_magnitude(self) -> float:
        """Mean jump of the per-observation surface ``V_n = z / n``."""
        return float(np.mean(self.magnitudes)) / self.n if self.magnitudes else 0.0


def detect_jumps(z: np.ndarray, n: int, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Intervals ``[t_k, t_{k+1}]`` where ``z`` jumps, with the jump sizes.

    Between jumps ``z`` is quadratic in the varied coordinate with curvature at
    most ``n``, so the increments ``dz`` drift by at most ``n step^2`` per
    interval.  An increment departing from its local median by more than ten
    times that drift is a jump.
    """
    dz = np.diff(np.asarray(z, dtype=float))
    resid = dz - median_filter(dz, size=7, mode="nearest")
    thr = 10.0 * n * step * step + 1e-9
    k = np.nonzero(np.abs(resid) > thr)[0]
    return k, np.abs(resid[k])


def midpoint_crossings(ds: Dataset, sl: SurfaceSlice) -> np.ndarray:
    """Intervals of a 1-D slice during which a boundary of the varied unit passes an observation."""
    if len(sl.varied_indices) != 1:
        raise DomainError("crossings are defined for single-centroid slices")
    (v,) = sl.varied_indices
    t = sl.axes[0]
    others = np.delete(sl.base.centroids[:, 0], v)
    w = np.sort(ds.observations[:, 0])
    out = []
    for k in range(t.size - 1):
        lo_t, hi_t = t[k], t[k + 1]
        for nb in others:
            # a boundary of unit v exists only with its sorted neighbours
            if not (_is_neighbour(lo_t, nb, others) and _is_neighbour(hi_t, nb, others)):
                continue
            a, b = sorted((0.5 * (lo_t + nb), 0.5 * (hi_t + nb)))
            if np.searchsorted(w, b, side="right") > np.searchsorted(w, a, side="left"):
                out.append(k)
                break
    return np.array(out, dtype=int)


def _is_neighbour(t: float, nb: float, others: np.ndarray) -> bool:
    lo, hi = min(t, nb), max(t, nb)
    return not np.any((others > lo) & (others < hi))


def slice_jump_summary(ds: Dataset, sl: SurfaceSlice) -> JumpSummary:
    t = sl.axes[0]
    step = float(t[1] - t[0])
    jumps, mags = detect_jumps(sl.z, sl.n, step)
    cross = midpoint_crossings(ds, sl)
    cross_set = set(cross.tolist())
    unmatched = [int(k) for k in jumps if not ({k - 1, k, k + 1} & cross_set)]
    return JumpSummary(sl.n, jumps.tolist(), mags.tolist(), cross.tolist(), unmatched, float(t[-1] - t[0]))


# -- law of large numbers and consistency ----------------------------------------


def random_probes(m: int, count: int, delta: float, seed: int) -> list[Codebook]:
    """``count`` random 1-D codebooks of ``D_I^delta`` (rejection sampling)."""
    if m > 1 and (m - 1) * delta >= 1:
        raise DomainError("delta too large for m centroids in [0, 1]")
    rng = streams.generator(seed, "probes")
    out = []
    while len(out) < count:
        cb = Codebook.string(rng.random(m))
        if in_separated_set(cb, delta):
            out.append(cb)
    return out


def sample_dataset(dens: Density, n: int, seed: int, *keys: int) -> Dataset:
    if n < 1:
        raise DomainError("n must be at least 1")
    return Dataset(dens.sample(n, streams.generator(seed, "data", *keys)), seed)


def lln_gaps(dens: Density, nf: NeighborhoodFunction, probes: list[Codebook], ds: Dataset) -> np.ndarray:
    """``|V_n(probe) - V(probe)|`` for every probe."""
    if not probes:
        raise DomainError("need at least one probe")
    axis = _axis(dens)
    sample = SortedSample.from_dataset(ds)
    gaps = []
    for cb in probes:
        lam = nf.matrix(cb.index_set)
        vn = empirical_distortion_1d_many(cb.centroids[:, 0], sample, nf, cb.index_set)[0]
        gaps.append(abs(vn - exact_distortion_1d(cb.centroids[:, 0], axis, lam)))
    return np.array(gaps)


def lln_probe(dens: Density, nf: NeighborhoodFunction, probes: list[Codebook], n: int, seed: int) -> float:
    """``sup_probe |V_n - V|`` on an ``n``-sample drawn from the ``data`` stream of ``seed``."""
    return float(lln_gaps(dens, nf, probes, sample_dataset(dens, n, seed)).max())


@dataclass(frozen=True)
class ConsistencyRow:
    n: int
    seed: int
    best_value: float
    witnesses: int
    max_distance: float
    minimizer_excess: float  # V_n(theoretical minimiser) - min V_n


def consistency_experiment(
    dens: Density,
    nf: NeighborhoodFunction,
    m: int,
    ns,
    beta_tol: float = 1e-9,
    scan_step: float = 0.001,
    seed: int = 0,
    workers: int = 1,
    minimizer: Codebook | None = None,
) -> list[ConsistencyRow]:
    """Distance from the empirical almost-minimisers to the theoretical minimiser, per ``n``."""
    if minimizer is None:
        minimizer = minimize_theoretical(dens, nf, m).codebook
    target = minimizer.centroids[:, 0]
    rows = []
    for n in np.atleast_1d(ns):
        ds = sample_dataset(dens, int(n), seed)
        scan = exhaustive_scan_1d(ds, nf, m, scan_step, within=beta_tol, workers=workers)
        dist = max(float(np.linalg.norm(cb.centroids[:, 0] - target)) for cb in scan.witnesses)
        excess = empirical_distortion(minimizer, ds, nf).value - scan.best_value
        rows.append(ConsistencyRow(int(n), int(seed), scan.best_value, len(scan.witnesses), dist, float(excess)))
    return rows


# -- measure of observations changing cells ----------------------------------------


@dataclass(frozen=True)
class PerturbationEstimate:
    estimate: float
    stderr: float
    bound: float
    holds: bool
    directions: int
    samples: int


def cell_change_bound(size: int, alpha: float, delta: float, dim: int) -> float:
    """``(|I| - 1) (2 alpha / delta + alpha) sqrt(2)^(d - 1)``."""
    return (size - 1) * (2.0 * alpha / delta + alpha) * math.sqrt(2.0) ** (dim - 1)


def perturbation_measure_mc(
    cb: Codebook,
    i: int,
    alpha: float,
    delta: float,
    samples: int = 100_000,
    seed: int = 0,
    directions: int = 64,
) -> PerturbationEstimate:
    """Lebesgue measure of the points leaving ``C_i`` when ``x_i`` moves by ``alpha``.

    Displacements of length ``alpha`` along sampled unit directions (both
    directions in 1-D) are kept when the moved codebook stays in
    ``D_I^delta``; a point counts when it leaves ``C_i`` for at least one kept
    displacement.  The estimate is compared with the cell-change bound at three
    standard errors.
    """
    if not in_separated_set(cb, delta):
        raise DomainError("codebook is not delta-separated")
    if not 0 < alpha < delta / 2:
        raise DomainError("need 0 < alpha < delta / 2")
    if not 0 <= i < cb.size:
        raise DomainError(f"unit {i} out of range")
    d = cb.dim
    if d == 1:
        dirs = np.array([[-1.0], [1.0]])
    else:
        raw = streams.generator(seed, "directions").standard_normal((directions, d))
        dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    moved = []
    for u in dirs:
        y = cb.centroids.copy()
        y[i] += alpha * u
        if np.all((y[i] >= 0) & (y[i] <= 1)):
            ycb = cb.replace(y)
            if cb.size < 2 or min_separation(ycb) >= delta:
                moved.append(ycb)
    hits = 0
    for c, size in streams.chunk_sizes(samples):
        pts = streams.generator(seed, "perturbation", c).random((size, d))
        inside = winners(cb, pts) == i
        left = np.zeros(size, dtype=bool)
        for ycb in moved:
            left |= winners(ycb, pts) != i
        hits += int(np.count_nonzero(inside & left))
    p = hits / samples
    se = math.sqrt(max(p * (1 - p), 0.0) / samples)
    bound = cell_change_bound(cb.size, alpha, delta, d)
    return PerturbationEstimate(p, se, bound, bool(p - 3 * se <= bound), len(moved), int(samples))
