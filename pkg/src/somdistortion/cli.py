"""Command-line front end: ``som-distortion <command> [options]``.

Every report is a JSON document that records the full run configuration, so a
rerun with the same arguments writes byte-identical files.

Exit codes: 0 on success, 1 on usage or input errors, 2 on numerical failures
(non-convergence, dead units, collapsed centroids).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, io, streams
from .analysis import (
    consistency_experiment,
    discontinuity_report,
    exhaustive_scan_1d,
    lln_gaps,
    perturbation_measure_mc,
    random_probes,
    sample_dataset,
    surface_slice,
)
from .distortion import (
    empirical_distortion,
    som_equilibrium_residual,
    theoretical_gradient_1d,
    theoretical_gradient_fd,
)
from .errors import DomainError, NumericalFailure
from .geometry import Codebook, IndexSet, NeighborhoodFunction, in_separated_set
from .som import LearningRate, TrainingSchedule, minimize_theoretical, solve_equilibrium, train_online

log = logging.getLogger("somdistortion")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def _neighborhood(text):
    try:
        return NeighborhoodFunction.parse(text)
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _vary(text):
    try:
        units = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--vary takes one or two unit positions, got {text}") from None
    if not 1 <= len(units) <= 2:
        raise argparse.ArgumentTypeError("--vary takes one or two unit positions")
    return units


def _config(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "verbose"):
            continue
        if isinstance(v, NeighborhoodFunction):
            v = str(v)
        elif isinstance(v, Path):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def _report(args, result: dict) -> dict:
    return {"command": args.command, "version": __version__, "config": _config(args), "result": result}


def _evenly_spaced(m: int) -> Codebook:
    return Codebook.string((np.arange(m) + 1.0) / (m + 1.0))


def _load_start(args, m: int) -> Codebook:
    if getattr(args, "codebook", None):
        cb, _ = io.read_codebook(args.codebook)
        return cb
    return _evenly_spaced(m)


def _fit_window(base: Codebook, units, window: float, step: float) -> float:
    """Largest multiple of ``step`` not above ``window`` keeping every swept unit in [0, 1]."""
    room = min(min(base.centroids[v, 0], 1.0 - base.centroids[v, 0]) for v in units)
    w = min(window, step * np.floor(room / step + 1e-9))
    if w < step:
        raise DomainError(f"no room for a slice around units {list(units)}")
    return float(w)


# -- commands ------------------------------------------------------------------


def cmd_gen_data(args):
    dens = io.parse_density(args.density)
    ds = sample_dataset(dens, args.n, args.seed)
    io.write_dataset(args.out, ds)
    log.info("wrote %d observations to %s", ds.n, args.out)


def cmd_scan(args):
    ds = io.read_dataset(args.data, skip_header=args.skip_header)
    nf = args.neighborhood
    res = exhaustive_scan_1d(ds, nf, args.m, args.step, within=args.within, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hits = discontinuity_report(res.best_codebook, ds, args.step)
    slices = []
    if not args.no_slices:
        sstep = args.slice_step or args.step
        groups = [(i,) for i in range(args.m)] + [(i, i + 1) for i in range(args.m - 1)]
        for units in groups:
            w = _fit_window(res.best_codebook, units, args.window, sstep)
            sl = surface_slice(ds, nf, res.best_codebook, units, window=w, step=sstep)
            name = "slice_" + "_".join(f"x{u}" for u in units) + ".csv"
            io.write_slice(out / name, sl)
            slices.append({"file": name, "varied": list(units), "window": w, "step": sstep, "z_min": float(sl.z.min())})
    result = {
        "n": ds.n,
        "best_codebook": io.codebook_to_dict(res.best_codebook, nf),
        "best_value": res.best_value,
        "n_times_best_value": ds.n * res.best_value,
        "candidates_evaluated": res.candidates_evaluated,
        "ties": [cb.centroids[:, 0].tolist() for cb in res.ties],
        "witnesses": [cb.centroids[:, 0].tolist() for cb in res.witnesses],
        "witness_values": res.witness_values,
        "discontinuities": [{"observation": o, "midpoint": mid, "gap": g} for o, mid, g in hits],
        "on_discontinuity": bool(hits),
        "slices": slices,
    }
    io.write_json(out / "scan.json", _report(args, result))
    print(f"best {res.best_codebook.centroids[:, 0].tolist()} V_n={res.best_value:.12g} "
          f"candidates={res.candidates_evaluated} on_discontinuity={bool(hits)}")


def cmd_slice(args):
    ds = io.read_dataset(args.data, skip_header=args.skip_header)
    cb, nf_file = io.read_codebook(args.codebook)
    nf = args.neighborhood if args.neighborhood is not None else (nf_file or NeighborhoodFunction.threshold(1))
    sl = surface_slice(ds, nf, cb, args.vary, window=args.window, step=args.step)
    io.write_slice(args.out, sl)


def cmd_compare(args):
    dens = io.parse_density(args.density)
    nf = args.neighborhood
    start = _load_start(args, args.m)
    eq = solve_equilibrium(start, dens, nf, tol=args.tol)
    mn = minimize_theoretical(dens, nf, start.index_set, init_grid_step=args.grid_step, tol=args.tol)
    grad_eq = theoretical_gradient_1d(eq.codebook, dens, nf)
    res_min = som_equilibrium_residual(mn.codebook, dens, nf)
    dist = float(np.linalg.norm(eq.codebook.centroids - mn.codebook.centroids))
    result = {
        "equilibrium": {
            "codebook": io.codebook_to_dict(eq.codebook, nf),
            "V": eq.value,
            "residual_norm": eq.residual_norm,
            "iterations": eq.iterations,
            "converged": eq.converged,
            "gradient": grad_eq.values[:, 0].tolist(),
        },
        "minimizer": {
            "codebook": io.codebook_to_dict(mn.codebook, nf),
            "V": mn.value,
            "gradient_norm": mn.gradient_norm,
            "iterations": mn.iterations,
            "converged": mn.converged,
            "residual": res_min[:, 0].tolist(),
        },
        "distance": dist,
        "coincide": dist <= 1e-6,
    }
    if args.gradient_csv:
        fd = theoretical_gradient_fd(eq.codebook, dens, nf, h=args.h)
        io.write_gradient(args.gradient_csv, grad_eq, fd)
    io.write_json(args.out, _report(args, result))
    print(f"equilibrium {eq.codebook.centroids[:, 0].tolist()} minimizer {mn.codebook.centroids[:, 0].tolist()} "
          f"distance={dist:.6g}")


def cmd_train(args):
    ds = io.read_dataset(args.data, skip_header=args.skip_header)
    nf = args.neighborhood
    start = _load_start(args, args.m)
    sched = TrainingSchedule(args.steps, LearningRate.parse(args.learning_rate), seed=args.seed)
    cb = train_online(start, ds, sched, nf)
    doc = io.codebook_to_dict(cb, nf)
    doc["report"] = _report(args, {"empirical_distortion": empirical_distortion(cb, ds, nf).value})
    io.write_json(args.out, doc)


def cmd_lln(args):
    dens = io.parse_density(args.density)
    nf = args.neighborhood
    probes = random_probes(args.m, args.probes, args.delta, args.seed)
    rows = []
    for n in args.n:
        gaps = lln_gaps(dens, nf, probes, sample_dataset(dens, n, args.seed))
        rows.append({"n": n, "sup_gap": float(gaps.max()), "mean_gap": float(gaps.mean())})
    io.write_json(args.out, _report(args, {"probes": [p.centroids[:, 0].tolist() for p in probes], "rows": rows}))
    for r in rows:
        print(f"n={r['n']} sup_gap={r['sup_gap']:.6g}")


def cmd_consistency(args):
    dens = io.parse_density(args.density)
    nf = args.neighborhood
    target = minimize_theoretical(dens, nf, args.m)
    rows = consistency_experiment(
        dens, nf, args.m, args.n, beta_tol=args.tol, scan_step=args.step, seed=args.seed,
        workers=args.workers, minimizer=target.codebook,
    )
    result = {
        "theoretical_minimizer": target.codebook.centroids[:, 0].tolist(),
        "rows": [vars(r) for r in rows],
    }
    io.write_json(args.out, _report(args, result))
    for r in rows:
        print(f"n={r.n} witnesses={r.witnesses} max_distance={r.max_distance:.6g}")


def cmd_lemma1(args):
    # random separated configurations in [0, 1]^dim
    rng = streams.generator(args.seed, "probes", args.dim)
    results = []
    for c in range(args.configs):
        while True:
            pts = rng.random((args.m, args.dim))
            cb = Codebook(IndexSet.string(args.m), pts)
            if in_separated_set(cb, args.delta):
                break
        unit = int(rng.integers(args.m))
        est = perturbation_measure_mc(cb, unit, args.alpha, args.delta, samples=args.samples,
                                      seed=args.seed + c, directions=args.directions)
        results.append({
            "centroids": cb.centroids.tolist(),
            "unit": unit,
            "estimate": est.estimate,
            "stderr": est.stderr,
            "bound": est.bound,
            "holds": est.holds,
            "directions_kept": est.directions,
        })
    holds = all(r["holds"] for r in results)
    io.write_json(args.out, _report(args, {"configurations": results, "bound_holds": holds}))
    print("bound holds" if holds else "bound violated")


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_nonneg_int, default=0, help="master seed for every random stream")
    common.add_argument("--out", required=True, help="output file (directory for scan)")
    common.add_argument("-v", "--verbose", action="store_true")

    def nbh(p, default="threshold:1"):
        p.add_argument("--neighborhood", type=_neighborhood, default=_neighborhood(default) if default else None,
                       help="threshold:R or gaussian:SIGMA (default %(default)s)")

    def data(p):
        p.add_argument("--data", required=True, help="dataset CSV, one observation per row")
        p.add_argument("--skip-header", action="store_true", help="ignore the first CSV row")

    def dens(p):
        p.add_argument("--density", default="uniform", help="uniform | piecewise:FILE")

    parser = _Parser(prog="som-distortion", description="SOM equilibria and distortion experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="sample a dataset from a density")
    p.add_argument("--n", type=_positive_int, required=True)
    dens(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("scan", parents=[common], help="exhaustive grid search of the empirical distortion")
    data(p)
    nbh(p)
    p.add_argument("--m", type=_positive_int, default=3, help="number of centroids")
    p.add_argument("--step", type=_positive_float, default=0.001)
    p.add_argument("--within", type=_nonneg_float, default=0.0, help="also report candidates this close to the best")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--window", type=_positive_float, default=0.05, help="half-width of the emitted slices")
    p.add_argument("--slice-step", type=_positive_float, default=None, help="slice resolution (default: --step)")
    p.add_argument("--no-slices", action="store_true")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("slice", parents=[common], help="n V_n around a codebook")
    data(p)
    nbh(p, default=None)
    p.add_argument("--codebook", required=True)
    p.add_argument("--vary", type=_vary, default=(0,), help="one or two unit positions, e.g. 0 or 0,1")
    p.add_argument("--window", type=_positive_float, default=0.05)
    p.add_argument("--step", type=_positive_float, default=0.001)
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("compare", parents=[common], help="SOM equilibrium against the distortion minimizer")
    dens(p)
    nbh(p)
    p.add_argument("--m", type=_positive_int, default=3)
    p.add_argument("--codebook", help="start of the batch iteration (default: evenly spaced)")
    p.add_argument("--tol", type=_positive_float, default=1e-12)
    p.add_argument("--grid-step", type=_positive_float, default=0.05, help="multistart grid of the minimizer")
    p.add_argument("--gradient-csv", help="also write exact and finite-difference gradients at the equilibrium")
    p.add_argument("--h", type=_positive_float, default=1e-5, help="finite-difference step")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("train", parents=[common], help="online SOM training")
    data(p)
    nbh(p)
    p.add_argument("--m", type=_positive_int, default=3)
    p.add_argument("--codebook", help="initial codebook (default: evenly spaced string)")
    p.add_argument("--steps", type=_nonneg_int, default=1000)
    p.add_argument("--learning-rate", default="decay:0.5,100,0.001", help="constant:EPS | decay:EPS0,TAU,FLOOR")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("lln", parents=[common], help="sup |V_n - V| over random probes")
    dens(p)
    nbh(p)
    p.add_argument("--m", type=_positive_int, default=3)
    p.add_argument("--n", type=_positive_int, nargs="+", default=[100, 10000])
    p.add_argument("--probes", type=_positive_int, default=50)
    p.add_argument("--delta", type=_positive_float, default=0.05)
    p.set_defaults(func=cmd_lln)

    p = sub.add_parser("consistency", parents=[common], help="almost-minimizers against the theoretical minimizer")
    dens(p)
    nbh(p)
    p.add_argument("--m", type=_positive_int, default=3)
    p.add_argument("--n", type=_positive_int, nargs="+", default=[100, 1000])
    p.add_argument("--tol", type=_nonneg_float, default=1e-9, help="almost-minimizer tolerance")
    p.add_argument("--step", type=_positive_float, default=0.001)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("lemma1", parents=[common], help="Monte Carlo check of the cell-change bound")
    p.add_argument("--m", type=_positive_int, default=4)
    p.add_argument("--dim", type=_positive_int, default=2)
    p.add_argument("--alpha", type=_positive_float, default=0.02)
    p.add_argument("--delta", type=_positive_float, default=0.1)
    p.add_argument("--samples", type=_positive_int, default=100_000)
    p.add_argument("--directions", type=_positive_int, default=64)
    p.add_argument("--configs", type=_positive_int, default=5)
    p.set_defaults(func=cmd_lemma1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"som-distortion: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except NumericalFailure as exc:
        print(f"som-distortion: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (DomainError, OSError) as exc:
        print(f"som-distortion: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
