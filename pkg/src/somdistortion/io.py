"""Reading and writing datasets, codebooks, densities, reports and plot tables.

Floats are written with 17 significant digits so that every file round-trips
to the same binary value.  JSON documents use sorted keys and a fixed indent,
which makes repeated runs byte-identical.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .distortion import GradientVector
from .errors import DomainError
from .geometry import Codebook, Dataset, Density, IndexSet, NeighborhoodFunction, PiecewiseConstant1D

FLOAT_FMT = "%.17g"


def _fmt(v: float) -> str:
    return FLOAT_FMT % float(v)


def _jsonable(obj):
    """Recursively convert numpy scalars/arrays; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def dumps(doc: dict) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


def write_json(path, doc: dict):
    Path(path).write_text(dumps(doc))


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: not a JSON document ({exc})") from None


# -- datasets ------------------------------------------------------------------


def write_dataset(path, ds: Dataset):
    np.savetxt(path, ds.observations, fmt=FLOAT_FMT, delimiter=",")


def read_dataset(path, skip_header: bool = False, seed: int | None = None) -> Dataset:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if skip_header:
            next(reader, None)
        for lineno, row in enumerate(reader, start=2 if skip_header else 1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DomainError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
    if not rows:
        raise DomainError(f"{path}: no observations")
    if len({len(r) for r in rows}) != 1:
        raise DomainError(f"{path}: rows have different numbers of columns")
    return Dataset(np.array(rows), seed)


# -- codebooks -----------------------------------------------------------------


def neighborhood_to_dict(nf: NeighborhoodFunction) -> dict:
    out = {"kind": nf.kind, "parameter": nf.parameter}
    if nf.kind == "threshold" and nf.norm != "sup":
        out["norm"] = nf.norm
    return out


def neighborhood_from_dict(doc: dict) -> NeighborhoodFunction:
    return NeighborhoodFunction(doc["kind"], doc["parameter"], doc.get("norm", "sup"))


def codebook_to_dict(cb: Codebook, nf: NeighborhoodFunction | None = None) -> dict:
    doc = {
        "lattice_dims": list(cb.index_set.lattice_dims),
        "dim": cb.dim,
        "centroids": cb.centroids.tolist(),
    }
    if nf is not None:
        doc["neighborhood"] = neighborhood_to_dict(nf)
    return doc


def codebook_from_dict(doc: dict) -> tuple[Codebook, NeighborhoodFunction | None]:
    try:
        index_set = IndexSet(tuple(int(v) for v in doc["lattice_dims"]))
        centroids = np.array(doc["centroids"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed codebook document: {exc}") from None
    if centroids.ndim != 2 or centroids.shape[1] != int(doc.get("dim", centroids.shape[1])):
        raise DomainError("codebook centroids do not match the declared dim")
    nf = neighborhood_from_dict(doc["neighborhood"]) if "neighborhood" in doc else None
    return Codebook(index_set, centroids), nf


def write_codebook(path, cb: Codebook, nf: NeighborhoodFunction | None = None):
    write_json(path, codebook_to_dict(cb, nf))


def read_codebook(path) -> tuple[Codebook, NeighborhoodFunction | None]:
    return codebook_from_dict(read_json(path))


# -- densities -----------------------------------------------------------------


def density_to_dict(dens: Density) -> dict:
    if dens.kind == "uniform":
        return {"kind": "uniform", "dim": dens.dim}
    return {
        "kind": "piecewise_constant",
        "axes": [{"breakpoints": ax.breakpoints.tolist(), "values": ax.values.tolist()} for ax in dens.axes],
    }


def density_from_dict(doc: dict) -> Density:
    kind = doc.get("kind")
    if kind == "uniform":
        return Density.uniform(int(doc.get("dim", 1)))
    if kind == "piecewise_constant":
        if "axes" in doc:
            return Density(tuple(PiecewiseConstant1D(a["breakpoints"], a["values"]) for a in doc["axes"]))
        return Density.piecewise(doc["breakpoints"], doc["values"])
    raise DomainError(f"unknown density kind {kind!r}")


def write_density(path, dens: Density):
    write_json(path, density_to_dict(dens))


def read_density(path) -> Density:
    return density_from_dict(read_json(path))


def parse_density(spec: str) -> Density:
    """``uniform``, ``uniform:D`` or ``piecewise:FILE`` (a density JSON document)."""
    kind, _, arg = spec.partition(":")
    if kind == "uniform":
        try:
            dim = int(arg) if arg else 1
        except ValueError:
            raise DomainError(f"bad density spec {spec!r}") from None
        if dim < 1:
            raise DomainError("density dimension must be positive")
        return Density.uniform(dim)
    if kind == "piecewise" and arg:
        return read_density(arg)
    raise DomainError(f"density spec must be 'uniform' or 'piecewise:FILE', got {spec!r}")


# -- tables --------------------------------------------------------------------


def write_table(path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v) for v in row) + "\n")


def read_table(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def slice_header(varied: tuple[int, ...]) -> list[str]:
    return [f"x_varied_{k + 1}" for k in range(len(varied))] + ["z"]


def write_slice(path, sl):
    write_table(path, slice_header(sl.varied_indices), sl.rows())


def write_gradient(path, exact: GradientVector, fd: GradientVector):
    rows = []
    m, d = exact.values.shape
    for i in range(m):
        for l in range(d):
            e, f = exact.values[i, l], fd.values[i, l]
            rows.append([str(i), str(l), e, f, abs(e - f)])
    write_table(path, ["index", "axis", "exact", "finite_difference", "abs_diff"], rows)
