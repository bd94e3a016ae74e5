"""Kohonen training (online and batch), SOM equilibria and distortion minimisers."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from . import streams
from .distortion import (
    _axis,
    cell_moments_1d,
    exact_distortion_1d,
    exact_gradient_1d,
    exact_residual_1d,
)
from .errors import CollapseError, ConvergenceError, DeadUnitError, DomainError
from .geometry import Codebook, Dataset, Density, IndexSet, NeighborhoodFunction, _as_points, winners

log = logging.getLogger(__name__)

#: minimum gap kept between consecutive centroids during 1-D minimisation
MIN_GAP = 1e-6
#: below this separation an iterate is treated as collapsed
COLLAPSE_GAP = 1e-9


@dataclass(frozen=True)
class LearningRate:
    """``constant``: eps0 for every step; ``decay``: ``max(floor, eps0 / (1 + t / tau))``."""

    kind: str = "decay"
    eps0: float = 0.5
    tau: float = 100.0
    floor: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("constant", "decay"):
            raise DomainError(f"unknown learning-rate kind {self.kind!r}")
        if not 0 < self.eps0 <= 1 or not 0 < self.floor <= 1 or not self.tau > 0:
            raise DomainError("learning rates must lie in (0, 1] and tau must be positive")

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.eps0
        return max(self.floor, self.eps0 / (1.0 + t / self.tau))

    @classmethod
    def parse(cls, text: str) -> "LearningRate":
        """``constant:EPS`` or ``decay:EPS0[,TAU[,FLOOR]]``."""
        kind, _, rest = text.partition(":")
        nums = [float(v) for v in rest.split(",") if v.strip()]
        if kind == "constant" and len(nums) == 1:
            return cls("constant", nums[0])
        if kind == "decay" and 1 <= len(nums) <= 3:
            return cls("decay", *nums)
        raise DomainError(f"bad learning-rate spec {text!r}")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "eps0": self.eps0, "tau": self.tau, "floor": self.floor}


@dataclass(frozen=True)
class TrainingSchedule:
    steps: int
    learning_rate: LearningRate = field(default_factory=LearningRate)
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.steps < 0:
            raise DomainError("steps must be nonnegative")


@dataclass(frozen=True)
class EquilibriumReport:
    codebook: Codebook
    residual_norm: float
    iterations: int
    converged: bool
    value: float


@dataclass(frozen=True)
class MinimizerReport:
    codebook: Codebook
    value: float
    gradient_norm: float
    iterations: int
    converged: bool
    starts: int


# -- online algorithm ---------------------------------------------------------


def _online_update(x: np.ndarray, w: np.ndarray, eps: float, lam: np.ndarray) -> int:
    d2 = np.sum((x - w) ** 2, axis=1)
    c = int(np.argmin(d2))
    x += eps * lam[c][:, None] * (w - x)
    # convex combinations stay in the cube; clip only absorbs one-ulp rounding
    np.clip(x, 0.0, 1.0, out=x)
    return c


def online_som_step(cb: Codebook, point, eps: float, nf: NeighborhoodFunction) -> Codebook:
    """One Kohonen update: ``x_i += eps * Lambda(i - c) * (w - x_i)`` with ``c`` the winner."""
    if not 0 < eps <= 1:
        raise DomainError("learning rate must lie in (0, 1]")
    w = _as_points(point, cb.dim)[0]
    x = cb.centroids.copy()
    _online_update(x, w, eps, nf.matrix(cb.index_set))
    return cb.replace(x)


def _stream_order(n: int, sched: TrainingSchedule) -> np.ndarray:
    if not sched.shuffle:
        return np.arange(sched.steps) % n
    rng = streams.generator(sched.seed, "shuffle")
    epochs = -(-sched.steps // n)
    return np.concatenate([rng.permutation(n) for _ in range(epochs)])[: sched.steps] if epochs else np.arange(0)


def train_online(cb0: Codebook, ds: Dataset, sched: TrainingSchedule, nf: NeighborhoodFunction) -> Codebook:
    if ds.dim != cb0.dim:
        raise DomainError(f"dimension mismatch: codebook d={cb0.dim}, dataset d={ds.dim}")
    lam = nf.matrix(cb0.index_set)
    x = cb0.centroids.copy()
    obs = ds.observations
    for t, row in enumerate(_stream_order(ds.n, sched)):
        _online_update(x, obs[row], sched.learning_rate(t), lam)
    return cb0.replace(x)


# -- batch algorithm ------------------------------------------------------------


def _cell_mass_first(cb: Codebook, source) -> tuple[np.ndarray, np.ndarray]:
    """Mass ``P(C_k)`` and first moment ``int_{C_k} w dP`` of every cell."""
    if isinstance(source, Dataset):
        if source.dim != cb.dim:
            raise DomainError(f"dimension mismatch: codebook d={cb.dim}, dataset d={source.dim}")
        win = winners(cb, source.observations)
        mass = np.bincount(win, minlength=cb.size) / source.n
        first = np.column_stack(
            [np.bincount(win, weights=source.observations[:, l], minlength=cb.size) for l in range(cb.dim)]
        ) / source.n
        return mass, first
    if isinstance(source, Density):
        if source.dim != 1 or cb.dim != 1:
            raise DomainError("batch steps against a density are exact and one-dimensional")
        if not cb.is_distinct():
            raise CollapseError("centroids coincide; cells are not intervals")
        m0, m1, _ = cell_moments_1d(cb.centroids[:, 0], _axis(source))
        return m0, m1.reshape(-1, 1)
    raise TypeError(f"source must be a Dataset or a Density, not {type(source).__name__}")


def batch_som_step(cb: Codebook, source, nf: NeighborhoodFunction) -> Codebook:
    """``x_i <- sum_k Lambda(i-k) int_{C_k} w dP / sum_k Lambda(i-k) P(C_k)``."""
    lam = nf.matrix(cb.index_set)
    mass, first = _cell_mass_first(cb, source)
    denom = lam @ mass
    if np.any(denom <= 0):
        dead = np.nonzero(denom <= 0)[0].tolist()
        raise DeadUnitError(f"units {dead} have zero neighbourhood mass")
    x = (lam @ first) / denom[:, None]
    return cb.replace(np.clip(x, 0.0, 1.0))


def _check_no_collapse(prev: np.ndarray, cur: np.ndarray):
    if cur.size < 2:
        return
    if np.min(np.abs(np.diff(np.sort(cur)))) <= COLLAPSE_GAP:
        raise CollapseError(f"centroids collapsed: {cur.tolist()}")
    if not np.array_equal(np.argsort(prev, kind="stable"), np.argsort(cur, kind="stable")):
        raise CollapseError("centroids crossed during the batch iteration")


def solve_equilibrium(
    cb0: Codebook, dens: Density, nf: NeighborhoodFunction, tol: float = 1e-12, max_iter: int = 10_000
) -> EquilibriumReport:
    """Iterate the exact 1-D batch map until the SOM residual falls below ``tol``."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    if cb0.dim != 1 or dens.dim != 1:
        raise DomainError("solve_equilibrium works on one-dimensional codebooks and densities")
    if not cb0.is_distinct():
        raise CollapseError("starting codebook has coincident centroids")
    axis = _axis(dens)
    lam = nf.matrix(cb0.index_set)
    x = cb0.centroids[:, 0].copy()
    res = np.max(np.abs(exact_residual_1d(x, axis, lam)))
    it = 0
    while res > tol and it < max_iter:
        nxt = batch_som_step(cb0.replace(x), dens, nf).centroids[:, 0]
        _check_no_collapse(x, nxt)
        x = nxt
        it += 1
        res = np.max(np.abs(exact_residual_1d(x, axis, lam)))
    if res > tol:
        log.warning("batch iteration stopped after %d steps with residual %.3g", it, res)
    return EquilibriumReport(cb0.replace(x), float(res), it, bool(res <= tol), exact_distortion_1d(x, axis, lam))


# -- minimisation of the theoretical distortion -----------------------------------


def project_ordered(x: np.ndarray, gap: float = MIN_GAP) -> np.ndarray:
    """Euclidean projection onto ``{0 <= x_1, x_{i+1} - x_i >= gap, x_m <= 1}``."""
    shift = gap * np.arange(x.size)
    z = isotonic_regression(x - shift).x if x.size > 1 else x.copy()
    return np.clip(z, 0.0, 1.0 - gap * (x.size - 1)) + shift


def _descend(x, value, grad, tol, max_iter):
    """Projected gradient descent with Armijo backtracking and Barzilai-Borwein trial steps."""
    v, g = value(x), grad(x)
    step = 1.0
    it = 0
    while it < max_iter and np.max(np.abs(g)) > tol:
        t = step
        while True:
            xn = project_ordered(x - t * g)
            vn = value(xn)
            if vn <= v + 1e-4 * np.dot(g, xn - x):
                break
            t *= 0.5
            if t < 1e-14:
                return x, it
        gn = grad(xn)
        s, y = xn - x, gn - g
        sy = np.dot(s, y)
        step = np.dot(s, s) / sy if sy > 0 else 1.0
        x, v, g = xn, vn, gn
        it += 1
    return x, it


def _newton_polish(x, grad, tol, max_iter=30, h=1e-7):
    """Newton iterations on ``grad = 0`` with a central-difference Hessian."""
    g = grad(x)
    it = 0
    while it < max_iter and np.max(np.abs(g)) > tol:
        hess = np.empty((x.size, x.size))
        for j in range(x.size):
            e = np.zeros(x.size)
            e[j] = h
            hess[:, j] = (grad(x + e) - grad(x - e)) / (2 * h)
        hess = 0.5 * (hess + hess.T)
        try:
            delta = np.linalg.solve(hess, -g)
        except np.linalg.LinAlgError:
            break
        xn = x + delta
        if np.any(np.diff(xn) <= MIN_GAP) or xn[0] < 0 or xn[-1] > 1:
            break
        x, g = xn, grad(xn)
        it += 1
    return x, it


def minimize_theoretical(
    dens: Density,
    nf: NeighborhoodFunction,
    m: int | IndexSet,
    init_grid_step: float = 0.05,
    tol: float = 1e-10,
    n_starts: int = 8,
    max_iter: int = 5000,
) -> MinimizerReport:
    """Multistart projected gradient descent on the exact 1-D theoretical distortion.

    Starts are the ``n_starts`` lowest-``V`` ordered tuples of the grid with
    spacing ``init_grid_step``; each descent is polished by Newton steps and
    accepted only if it ends interior with ``|grad|_inf <= tol``.  The answer
    is the accepted local minimiser of smallest ``V`` (ties: lexicographically
    smallest codebook).
    """
    index_set = m if isinstance(m, IndexSet) else IndexSet.string(int(m))
    if index_set.e != 1:
        raise DomainError("minimize_theoretical orders centroids along a string lattice")
    size = index_set.size
    axis = _axis(dens)
    lam = nf.matrix(index_set)
    if not 0 < init_grid_step <= 1:
        raise DomainError("init_grid_step must lie in (0, 1]")
    grid = np.linspace(0.0, 1.0, int(round(1.0 / init_grid_step)) + 1)
    if grid.size < size:
        raise DomainError("start grid too coarse for the number of centroids")

    def value(x):
        return exact_distortion_1d(x, axis, lam)

    def grad(x):
        return exact_gradient_1d(x, axis, lam)

    starts = np.array(list(itertools.combinations(grid, size)))
    start_values = np.array([value(s) for s in starts])
    # lowest V first, then lexicographic
    order = np.lexsort(tuple(starts.T[::-1]) + (start_values,))[:n_starts]

    accepted = []
    total_iter = 0
    for s in starts[order]:
        x0 = project_ordered(s)
        x, it = _descend(x0, value, grad, max(tol, 1e-7), max_iter)
        x, it2 = _newton_polish(x, grad, tol)
        total_iter += it + it2
        gnorm = float(np.max(np.abs(grad(x))))
        interior = x[0] > 0 and x[-1] < 1 and np.all(np.diff(x) > MIN_GAP)
        if gnorm <= tol and interior:
            accepted.append((value(x), tuple(x.tolist()), gnorm))
    if not accepted:
        raise ConvergenceError(f"none of {len(order)} starts reached |grad| <= {tol:g}")
    best_v = min(a[0] for a in accepted)
    v, xt, gnorm = min(a for a in accepted if a[0] <= best_v + 1e-15)
    cb = Codebook(index_set, np.array(xt).reshape(-1, 1))
    return MinimizerReport(cb, float(v), gnorm, total_iter, True, len(order))
