import json
import math
import subprocess
import sys

import numpy as np
import pytest

from somdistortion import Codebook, Dataset, Density, DomainError, IndexSet, NeighborhoodFunction, io
from somdistortion.cli import main
from somdistortion.distortion import GradientVector


def run(*argv):
    return main([str(a) for a in argv])


def test_dataset_round_trip(tmp_path):
    ds = Dataset(np.random.default_rng(0).random((7, 2)))
    io.write_dataset(tmp_path / "d.csv", ds)
    back = io.read_dataset(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.observations, ds.observations)


def test_dataset_header_and_errors(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("w\n0.25\n0.5\n")
    assert io.read_dataset(p, skip_header=True).observations[:, 0].tolist() == [0.25, 0.5]
    with pytest.raises(DomainError):
        io.read_dataset(p)
    p.write_text("0.1,0.2\n0.3\n")
    with pytest.raises(DomainError):
        io.read_dataset(p)


def test_codebook_and_density_round_trip(tmp_path):
    cb = Codebook(IndexSet((2, 2)), np.random.default_rng(1).random((4, 2)))
    nf = NeighborhoodFunction.gaussian(0.75)
    io.write_codebook(tmp_path / "c.json", cb, nf)
    cb2, nf2 = io.read_codebook(tmp_path / "c.json")
    assert cb2 == cb and nf2 == nf
    doc = json.loads((tmp_path / "c.json").read_text())
    assert set(doc) == {"lattice_dims", "dim", "centroids", "neighborhood"}

    dens = Density.piecewise([0.0, 0.5, 1.0], [1.5, 0.5])
    io.write_density(tmp_path / "f.json", dens)
    back = io.read_density(tmp_path / "f.json")
    np.testing.assert_array_equal(back.axes[0].values, dens.axes[0].values)
    assert io.parse_density(f"piecewise:{tmp_path / 'f.json'}").kind == "piecewise_constant"
    assert io.parse_density("uniform").dim == 1
    with pytest.raises(DomainError):
        io.parse_density("normal")


def test_gradient_table(tmp_path):
    ex = GradientVector(np.array([[0.1], [-0.2]]), "exact_1d")
    fd = GradientVector(np.array([[0.1000001], [-0.2]]), "finite_difference", 1e-5)
    io.write_gradient(tmp_path / "g.csv", ex, fd)
    header, data = io.read_table(tmp_path / "g.csv")
    assert header == ["index", "axis", "exact", "finite_difference", "abs_diff"]
    np.testing.assert_allclose(data[:, 4], [1e-7, 0], atol=1e-15)


def test_gen_data_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("gen-data", "--n", 10, "--seed", 1, "--out", a) == 0
    assert run("gen-data", "--n", 10, "--seed", 1, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    ds = io.read_dataset(a)
    assert ds.n == 10 and np.all((ds.observations >= 0) & (ds.observations <= 1))


def test_gen_data_mean(tmp_path):
    run("gen-data", "--n", 1000, "--seed", 2, "--out", tmp_path / "d.csv")
    w = io.read_dataset(tmp_path / "d.csv").observations
    assert abs(w.mean() - 0.5) <= 4 / math.sqrt(12 * 1000)


def test_scan_command_full_grid(tmp_path):
    run("gen-data", "--n", 10, "--seed", 1, "--out", tmp_path / "d.csv")
    assert run("scan", "--data", tmp_path / "d.csv", "--step", 0.001, "--no-slices", "--out", tmp_path / "s") == 0
    rep = json.loads((tmp_path / "s" / "scan.json").read_text())
    assert rep["result"]["candidates_evaluated"] == math.comb(1001, 3) == 166_666_500
    assert rep["config"]["seed"] == 0 and rep["config"]["step"] == 0.001


def test_scan_command_slices_and_reproducibility(tmp_path):
    run("gen-data", "--n", 30, "--seed", 3, "--out", tmp_path / "d.csv")
    out = tmp_path / "s1"
    snapshots = []
    for _ in range(2):
        assert run("scan", "--data", tmp_path / "d.csv", "--step", 0.01, "--out", out) == 0
        snapshots.append({p.name: p.read_bytes() for p in out.iterdir()})
    files = sorted(snapshots[0])
    assert files == ["scan.json", "slice_x0.csv", "slice_x0_x1.csv", "slice_x1.csv", "slice_x1_x2.csv", "slice_x2.csv"]
    assert snapshots[0] == snapshots[1]
    header, data = io.read_table(tmp_path / "s1" / "slice_x0_x1.csv")
    assert header == ["x_varied_1", "x_varied_2", "z"]
    rep = json.loads((tmp_path / "s1" / "scan.json").read_text())
    best = rep["result"]["n_times_best_value"]
    assert data[:, 2].min() >= best - 1e-12
    cb, nf = io.codebook_from_dict(rep["result"]["best_codebook"])
    assert nf == NeighborhoodFunction.threshold(1) and cb.size == 3


def test_scan_single_centroid_is_mean(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0.1\n0.2\n0.6\n")
    run("scan", "--data", p, "--m", 1, "--step", 0.01, "--no-slices", "--out", tmp_path / "s")
    rep = json.loads((tmp_path / "s" / "scan.json").read_text())
    assert rep["result"]["best_codebook"]["centroids"] == [[0.3]]


def test_slice_command(tmp_path):
    run("gen-data", "--n", 20, "--seed", 5, "--out", tmp_path / "d.csv")
    io.write_codebook(tmp_path / "c.json", Codebook.string([0.3, 0.5, 0.7]), NeighborhoodFunction.threshold(1))
    assert run("slice", "--data", tmp_path / "d.csv", "--codebook", tmp_path / "c.json", "--vary", "1,2",
               "--window", 0.02, "--step", 0.01, "--out", tmp_path / "s.csv") == 0
    header, data = io.read_table(tmp_path / "s.csv")
    assert data.shape == (25, 3)


def test_compare_command(tmp_path):
    assert run("compare", "--out", tmp_path / "c.json", "--gradient-csv", tmp_path / "g.csv") == 0
    res = json.loads((tmp_path / "c.json").read_text())["result"]
    np.testing.assert_allclose(np.ravel(res["equilibrium"]["codebook"]["centroids"]), [0.3, 0.5, 0.7], atol=1e-9)
    np.testing.assert_allclose(res["equilibrium"]["gradient"], [-0.0225, 0.0, 0.0225], atol=1e-9)
    assert res["distance"] > 0.01 and not res["coincide"]
    _, g = io.read_table(tmp_path / "g.csv")
    assert g[:, 4].max() < 1e-6

    run("compare", "--neighborhood", "threshold:0", "--out", tmp_path / "c0.json")
    assert json.loads((tmp_path / "c0.json").read_text())["result"]["distance"] < 1e-6
    run("compare", "--m", 1, "--out", tmp_path / "c1.json")
    res1 = json.loads((tmp_path / "c1.json").read_text())["result"]
    assert res1["distance"] == 0.0 and res1["minimizer"]["codebook"]["centroids"] == [[0.5]]


def test_train_command(tmp_path):
    run("gen-data", "--n", 50, "--seed", 1, "--out", tmp_path / "d.csv")
    io.write_codebook(tmp_path / "c.json", Codebook.string([0.2, 0.4, 0.9]))
    assert run("train", "--data", tmp_path / "d.csv", "--codebook", tmp_path / "c.json", "--steps", 0,
               "--out", tmp_path / "t.json") == 0
    cb, _ = io.read_codebook(tmp_path / "t.json")
    assert cb == Codebook.string([0.2, 0.4, 0.9])
    first = None
    for _ in range(2):
        run("train", "--data", tmp_path / "d.csv", "--steps", 500, "--seed", 2, "--out", tmp_path / "t2.json")
        first = first or (tmp_path / "t2.json").read_bytes()
    assert (tmp_path / "t2.json").read_bytes() == first


def test_lln_command(tmp_path):
    assert run("lln", "--n", 100, 10000, "--seed", 3, "--out", tmp_path / "l.json") == 0
    rows = json.loads((tmp_path / "l.json").read_text())["result"]["rows"]
    assert rows[1]["sup_gap"] < rows[0]["sup_gap"]


def test_consistency_command(tmp_path):
    assert run("consistency", "--n", 100, 2000, "--step", 0.01, "--seed", 1, "--out", tmp_path / "c.json") == 0
    res = json.loads((tmp_path / "c.json").read_text())["result"]
    assert len(res["rows"]) == 2 and res["rows"][0]["n"] == 100


def test_lemma1_command(tmp_path, capsys):
    assert run("lemma1", "--configs", 2, "--samples", 20000, "--out", tmp_path / "L.json") == 0
    assert "bound holds" in capsys.readouterr().out
    assert json.loads((tmp_path / "L.json").read_text())["result"]["bound_holds"] is True


def test_exit_codes(tmp_path):
    assert run("scan", "--data", tmp_path / "missing.csv", "--out", tmp_path / "s") == 1
    assert run("scan", "--out", tmp_path / "s") == 1
    assert run("gen-data", "--n", 0, "--out", tmp_path / "x.csv") == 1
    assert run("compare", "--neighborhood", "box:1", "--out", tmp_path / "x.json") == 1
    assert run("frobnicate") == 1
    io.write_codebook(tmp_path / "bad.json", Codebook.string([0.4, 0.4, 0.6]))
    assert run("compare", "--codebook", tmp_path / "bad.json", "--out", tmp_path / "x.json") == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "somdistortion", "gen-data", "--n", "0", "--out", str(tmp_path / "x")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "positive integer" in proc.stderr
