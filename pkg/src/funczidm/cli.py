"""Command line entry point: ``funczidm {fit,simulate,score,infer}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 a chain diverged
(a diagnostic dump is written next to the chain files).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .basis import BasisError, build_basis
from .config import ConfigError, CovariateSpec, RunConfig
from .data import CovariateProfile, DataError
from .draws import FormatError, PosteriorDraws
from .inference import (
    InferenceError,
    coefficient_curves,
    delta_RA,
    delta_diversity,
    heatmap,
    relative_abundance,
    summarize_function,
)
from .ingest import ingest_csv, write_csv
from .model import ModelError
from .sampler import DivergenceError, run_chains
from .simgen import SimulationTruth, generate_dataset, score_draws

log = logging.getLogger("funczidm")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3
VALIDATION_ERRORS = (ConfigError, DataError, FormatError, InferenceError, BasisError, ModelError,
                     ValueError, FileNotFoundError)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = cfg.with_sampler(seed=args.seed, n_chains=args.chains, iterations=args.iters,
                           burn_in=args.burnin, thin=args.thin)
    return cfg


def _out(args, cfg: RunConfig | None = None) -> Path:
    out = Path(args.out if args.out is not None else (cfg.out if cfg else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_chains(paths) -> PosteriorDraws:
    chains = [PosteriorDraws.load(p) for p in paths]
    return chains[0] if len(chains) == 1 else PosteriorDraws.concatenate(chains)


# ------------------------------------------------------------------ commands
def cmd_fit(args) -> int:
    cfg = _config(args)
    data_path = args.data or cfg.data
    if data_path is None:
        raise ConfigError("no data file: set 'data' in the config or pass --data")
    out = _out(args, cfg)
    data = ingest_csv(data_path, cfg)
    basis = build_basis(data.times, cfg.hyper.D)
    cfg.save(out / "config.yaml")
    write_csv(data, out / "data.csv", cfg.id_column, cfg.time_column)
    log.info("fitting N=%d R=%d J=%d P=%d with %d chain(s) of %d iterations",
             data.N, data.R, data.J, data.P, cfg.sampler.n_chains, cfg.sampler.iterations)
    try:
        chains = run_chains(data, cfg.hyper, basis, cfg.sampler)
    except DivergenceError as err:
        dump = out / "divergence.json"
        dump.write_text(json.dumps(err.dump, indent=1, default=_jsonable))
        print(f"divergence: {err} (dump written to {dump})", file=sys.stderr)
        return EXIT_DIVERGED
    summary = {}
    for k, draws in enumerate(chains):
        draws.meta["taxa"] = data.taxon_names
        draws.meta["covariates"] = data.covariate_names
        path = draws.save(out / f"chain{k}.npz")
        summary[draws.label] = {"file": path.name, "draws": draws.n_draws,
                                "acceptance": draws.acceptance,
                                "runtime_seconds": draws.meta.get("runtime_seconds")}
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    for label, s in summary.items():
        acc = ", ".join(f"{k}={v:.3f}" for k, v in s["acceptance"].items())
        print(f"{label}: {s['draws']} draws, acceptance {acc}")
    print("divergences: none")
    return EXIT_OK


def simulation_config(J: int, P: int) -> RunConfig:
    """Config matching the column layout written by ``simulate``; keeps every taxon."""
    return RunConfig(min_individuals=1,
                     covariates=tuple(CovariateSpec(f"x{p + 1}") for p in range(P)),
                     taxa=tuple(f"taxon{j + 1}" for j in range(J)))


def cmd_simulate(args) -> int:
    out = _out(args)
    seed = 0 if args.seed is None else args.seed
    data, truth = generate_dataset(args.J, seed, N=args.N, P=args.P)
    write_csv(data, out / "data.csv")
    truth.save(out / "truth.json")
    cfg = simulation_config(args.J, args.P)
    replace(cfg, data="data.csv", out="fit").save(out / "config.yaml")
    print(f"wrote {out / 'data.csv'} ({data.R} records, {data.J} taxa) and {out / 'truth.json'}")
    return EXIT_OK


def cmd_score(args) -> int:
    draws = _load_chains(args.chains)
    truth = SimulationTruth.load(args.truth)
    data = ingest_csv(args.data, simulation_config(truth.J, truth.P)) if args.data else None
    scores = score_draws(draws, truth, data=data)
    row = scores.table_row()
    out = Path(args.out) if args.out else None
    lines = [list(row.keys()), [repr(v) for v in row.values()]]
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as fh:
            csv.writer(fh).writerows(lines)
    for k, v in row.items():
        print(f"{k}: {v:.4f}")
    return EXIT_OK


def _profile(args, P: int) -> CovariateProfile:
    if args.profile is None:
        return CovariateProfile.reference(P)
    values = [float(v) for v in args.profile.split(",")]
    if len(values) != P:
        raise InferenceError(f"profile has {len(values)} values, model has {P} covariates")
    return CovariateProfile(values)


def cmd_infer(args) -> int:
    draws = _load_chains(args.chains)
    basis = draws.basis
    P = draws.beta.shape[2] - 1
    t_min, t_max = basis.boundary
    lo, hi = args.window if args.window else (t_min, t_max)
    if not lo < hi:
        raise InferenceError("window must satisfy t_lo < t_hi")
    if lo < t_min or hi > t_max:
        raise InferenceError(f"window [{lo}, {hi}] leaves the observed range [{t_min}, {t_max}]")
    grid = np.linspace(lo, hi, args.grid_points)
    profile = _profile(args, P)
    taxa = draws.meta.get("taxa") or [f"taxon{j + 1}" for j in range(draws.beta.shape[1])]
    q = args.quantity
    if q in ("deltaRA", "deltaDiv") and args.p is None:
        raise InferenceError(f"{q} needs --p")
    if args.p is not None and not 0 <= args.p < P:
        raise InferenceError(f"--p must lie in [0, {P})")
    out = _out(args)
    if args.v_grid:
        v_grid = np.array([float(v) for v in args.v_grid.split(",")])
        if q not in ("deltaRA", "deltaDiv"):
            raise InferenceError("heatmaps are available for deltaRA and deltaDiv")
        if q == "deltaRA" and args.taxon is None:
            raise InferenceError("deltaRA heatmap needs --taxon")
        mat = heatmap(draws, basis, grid, v_grid, profile, args.p, quantity=q,
                      taxon=args.taxon, l=args.l)
        path = out / f"heatmap_{q}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *(repr(float(v)) for v in v_grid)])
            for t, row in zip(grid, mat):
                w.writerow([repr(float(t)), *(repr(float(x)) for x in row)])
        print(f"wrote {path}")
        return EXIT_OK
    if q == "beta":
        names = ["intercept", *(draws.meta.get("covariates") or [f"x{p + 1}" for p in range(P)])]
        cols = [f"{t}:{n}" for t in taxa for n in names]
        summ = summarize_function(draws, lambda b, g: coefficient_curves(b, basis, g).reshape(
            b.shape[0], g.size, -1), grid, columns=cols, label="beta")
    elif q == "RA":
        summ = summarize_function(draws, lambda b, g: relative_abundance(b, basis, g, profile),
                                  grid, columns=taxa, label="RA")
    elif q == "deltaRA":
        summ = summarize_function(draws, lambda b, g: delta_RA(b, basis, g, profile, args.p, args.v),
                                  grid, columns=taxa, label="deltaRA")
    else:
        summ = summarize_function(
            draws, lambda b, g: delta_diversity(b, basis, g, profile, args.p, args.v, args.l)[..., None],
            grid, columns=["diversity"], label="deltaDiv")
    csv_path = summ.to_csv(out / f"{q}.csv")
    summ.to_json(out / f"{q}.json")
    print(f"wrote {csv_path}")
    return EXIT_OK


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return str(x)


# -------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funczidm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run MCMC chains on a count table")
    fit.add_argument("--config")
    fit.add_argument("--data", help="CSV file (overrides the config)")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--chains", type=int)
    fit.add_argument("--iters", type=int)
    fit.add_argument("--burnin", type=int)
    fit.add_argument("--thin", type=int)
    fit.add_argument("--out")
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset and its truth")
    sim.add_argument("--J", type=int, default=20)
    sim.add_argument("--N", type=int, default=50)
    sim.add_argument("--P", type=int, default=10)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", default="sim")
    sim.set_defaults(func=cmd_simulate)

    score = sub.add_parser("score", help="score chains against a simulation truth")
    score.add_argument("--chains", nargs="+", required=True)
    score.add_argument("--truth", required=True)
    score.add_argument("--data", help="simulated CSV, needed for MeAD")
    score.add_argument("--out", help="CSV file for the metrics row")
    score.set_defaults(func=cmd_score)

    inf = sub.add_parser("infer", help="posterior curves and heatmaps")
    inf.add_argument("--chains", nargs="+", required=True)
    inf.add_argument("--quantity", choices=("beta", "RA", "deltaRA", "deltaDiv"), default="deltaRA")
    inf.add_argument("--profile", help="comma-separated covariate values (default all zero)")
    inf.add_argument("--p", type=int, help="covariate index (0-based) for delta quantities")
    inf.add_argument("--v", type=float, default=1.0)
    inf.add_argument("--v-grid", help="comma-separated shifts; writes a t x v heatmap")
    inf.add_argument("--taxon", type=int)
    inf.add_argument("--l", type=float, default=0.75)
    inf.add_argument("--window", type=float, nargs=2, metavar=("T_LO", "T_HI"))
    inf.add_argument("--grid-points", type=int, default=101)
    inf.add_argument("--out", default="infer")
    inf.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
