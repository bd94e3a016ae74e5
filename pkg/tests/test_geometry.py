import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from somdistortion import (
    Codebook,
    Dataset,
    Density,
    DomainError,
    IndexSet,
    NeighborhoodFunction,
    assign_winner,
    in_separated_set,
    mediator_midpoints_1d,
    min_separation,
    neighborhood_value,
    voronoi_partition,
    winners,
)

import oracles

unit = st.floats(0.0, 1.0, allow_nan=False)


def test_index_set_lexicographic():
    I = IndexSet((2, 3))
    assert I.size == 6 and I.e == 2
    assert I.indices.tolist() == [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]]
    assert I.position((1, 0)) == 3
    with pytest.raises(DomainError):
        IndexSet((0,))


@pytest.mark.parametrize("nf", [NeighborhoodFunction.threshold(0), NeighborhoodFunction.threshold(2),
                                NeighborhoodFunction.gaussian(0.7)])
def test_kernel_at_zero(nf):
    assert neighborhood_value(nf, 0) == 1.0


def test_kernel_examples():
    assert neighborhood_value(NeighborhoodFunction.threshold(1), 2) == 0.0
    assert neighborhood_value(NeighborhoodFunction.threshold(1), 1) == 1.0
    assert neighborhood_value(NeighborhoodFunction.gaussian(1.0), 1) == pytest.approx(math.exp(-0.5), abs=1e-15)


def test_kernel_outside_difference_set():
    with pytest.raises(DomainError):
        neighborhood_value(NeighborhoodFunction.threshold(1), 3, IndexSet.string(3))
    assert neighborhood_value(NeighborhoodFunction.threshold(1), -2, IndexSet.string(3)) == 0.0


def test_sup_norm_includes_diagonal():
    I = IndexSet((3, 3))
    assert NeighborhoodFunction.threshold(1).value([1, 1], I) == 1.0
    assert NeighborhoodFunction.threshold(1, norm="l1").value([1, 1], I) == 0.0


@given(st.integers(-5, 5), st.integers(-5, 5), st.integers(0, 3), st.floats(0.1, 5.0))
def test_kernel_symmetry(a, b, r, sigma):
    for nf in (NeighborhoodFunction.threshold(r), NeighborhoodFunction.gaussian(sigma)):
        assert nf.value([a, b]) == nf.value([-a, -b])
        assert 0.0 <= nf.value([a, b]) <= 1.0


def test_kernel_parse_and_errors():
    assert NeighborhoodFunction.parse("threshold:1") == NeighborhoodFunction.threshold(1)
    assert NeighborhoodFunction.parse("gaussian:0.5").parameter == 0.5
    for bad in ("threshold", "threshold:1.5", "gaussian:0", "cosine:1", "threshold:x"):
        with pytest.raises(DomainError):
            NeighborhoodFunction.parse(bad)


def test_matrix_matches_oracle():
    I = IndexSet((2, 3))
    for nf in (NeighborhoodFunction.threshold(1), NeighborhoodFunction.gaussian(1.3)):
        lam = nf.matrix(I)
        idx = oracles.lattice((2, 3))
        ref = [[oracles.kernel(nf.kind, nf.parameter, a - b) for b in idx] for a in idx]
        np.testing.assert_allclose(lam, ref, rtol=0, atol=1e-15)


def test_assign_winner_examples():
    cb = Codebook.string([0.2, 0.8])
    assert assign_winner(cb, 0.1) == 0
    assert assign_winner(cb, 0.5) == 0
    grid = Codebook(IndexSet((2, 2)), [[0.2, 0.2], [0.2, 0.8], [0.8, 0.2], [0.8, 0.8]])
    assert assign_winner(grid, [0.8, 0.2]) == 2


def test_tie_goes_to_smaller_index_even_when_listed_last():
    cb = Codebook.string([0.75, 0.25])
    assert assign_winner(cb, 0.5) == 0
    assert winners(Codebook.string([0.25, 0.75]), [[0.5]]).tolist() == [0]


def test_voronoi_partition_examples():
    cb = Codebook.string([0.2, 0.8])
    assert voronoi_partition(cb, Dataset.from_1d([0.1, 0.9])) == {0: [0], 1: [1]}
    assert voronoi_partition(cb, Dataset.from_1d([0.5])) == {0: [0], 1: []}
    assert voronoi_partition(Codebook.string([0.4]), Dataset.from_1d([0.1, 0.9])) == {0: [0, 1]}
    with pytest.raises(DomainError):
        voronoi_partition(cb, Dataset(np.full((2, 2), 0.5)))


@settings(max_examples=60)
@given(st.lists(unit, min_size=1, max_size=5), st.lists(unit, min_size=1, max_size=20))
def test_partition_and_winner_consistency(xs, ws):
    cb = Codebook.string(xs)
    ds = Dataset.from_1d(ws)
    cells = voronoi_partition(cb, ds)
    assert sorted(sum(cells.values(), [])) == list(range(len(ws)))
    for i, rows in cells.items():
        for r in rows:
            assert r in cells[oracles.winner(cb.centroids, ds.observations[r])]
            d = (cb.centroids[:, 0] - ws[r]) ** 2
            assert np.all(d[i] <= d)
            assert not np.any(d[:i] == d[i])


def test_winners_2d_against_oracle():
    rng = np.random.default_rng(5)
    c = rng.random((6, 2))
    pts = rng.random((300, 2))
    cb = Codebook(IndexSet((2, 3)), c)
    assert winners(cb, pts).tolist() == [oracles.winner(c, p) for p in pts]


def test_min_separation_examples():
    assert min_separation(Codebook.string([0.3, 0.5, 0.7])) == pytest.approx(0.2, abs=1e-15)
    assert min_separation(Codebook.string([0.3, 0.3, 0.7])) == 0.0
    assert min_separation(Codebook(IndexSet((2,)), [[0, 0], [1, 1]])) == pytest.approx(math.sqrt(2))
    with pytest.raises(DomainError):
        min_separation(Codebook.string([0.5]))


def test_separated_set_membership():
    cb = Codebook.string([0.3, 0.5, 0.7])
    assert in_separated_set(cb, 0.2 - 1e-12)
    assert not in_separated_set(cb, 0.21)


def test_mediator_midpoints_examples():
    np.testing.assert_allclose(mediator_midpoints_1d(Codebook.string([0.3, 0.5, 0.7])), [0.4, 0.6])
    np.testing.assert_allclose(mediator_midpoints_1d(Codebook.string([0.2, 0.8])), [0.5])
    np.testing.assert_allclose(mediator_midpoints_1d(Codebook.string([0.7, 0.3, 0.5])), [0.4, 0.6])
    with pytest.raises(DomainError):
        mediator_midpoints_1d(Codebook(IndexSet((2,)), [[0, 0], [1, 1]]))


@settings(max_examples=40)
@given(st.lists(st.floats(0.01, 0.99), min_size=2, max_size=5, unique=True))
def test_winner_changes_exactly_at_midpoints(xs):
    cb = Codebook.string(xs)
    mids = mediator_midpoints_1d(cb)
    t = np.linspace(0, 1, 2001)
    w = winners(cb, t[:, None])
    change = t[1:][w[1:] != w[:-1]]
    for c in change:
        assert np.min(np.abs(mids - c)) <= 1e-3 + 1e-12
    # every midpoint between distinct neighbours shows up as a change
    assert len(change) == len(np.unique(np.round(mids, 12)))


def test_codebook_validation():
    with pytest.raises(DomainError):
        Codebook.string([0.5, 1.2])
    with pytest.raises(DomainError):
        Codebook(IndexSet.string(3), [[0.1], [0.2]])
    with pytest.warns(UserWarning):
        Codebook(IndexSet((2, 2)), np.full((4, 1), 0.5))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        Codebook(IndexSet((2, 2)), np.full((4, 2), 0.5))


def test_codebook_is_read_only():
    cb = Codebook.string([0.1, 0.2])
    with pytest.raises(ValueError):
        cb.centroids[0, 0] = 0.5


def test_dataset_validation():
    with pytest.raises(DomainError):
        Dataset.from_1d([])
    with pytest.raises(DomainError):
        Dataset.from_1d([0.5, -0.1])


def test_piecewise_density():
    dens = Density.piecewise([0.0, 0.25, 1.0], [2.0, 2.0 / 3.0])
    assert dens.kind == "piecewise_constant"
    assert dens.bound == 2.0
    m0, m1, m2 = dens.axes[0].moments(0.0, 1.0)
    assert m0 == pytest.approx(1.0)
    assert m1 == pytest.approx(2 * 0.25**2 / 2 + (2 / 3) * (1 - 0.25**2) / 2)
    sample = dens.sample(20000, np.random.default_rng(0))
    assert np.all((sample >= 0) & (sample <= 1))
    assert np.mean(sample < 0.25) == pytest.approx(0.5, abs=0.02)
    with pytest.raises(DomainError):
        Density.piecewise([0.0, 0.5, 1.0], [1.0, 2.0])
    assert Density.uniform(2).kind == "uniform"
