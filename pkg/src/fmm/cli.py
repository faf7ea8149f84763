"""Command-line entry point.

Subcommands: simulate, warps, fit, bma, predict, diagnose. Options can also
come from a flat ``key=value`` file given with ``--config``; flags given on
the command line take precedence. Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import files
from .bma import BmaResult, accumulate_kernel_probs
from .diagnostics import empirical_variogram, residual_variogram_envelope
from .ingest import StandardizedTrack, Standardization, Track, load_track, standardize
from .kernels import FAMILIES, KernelSpec, KnotGrid, build_basis
from .mcmc import ModelSpec, PriorConfig, fit_model
from .pipeline import RunConfig, model_seed, run_bma, stage_seed
from .predict import PathDraws, posterior_residuals, sample_path
from .sim import SimConfig, simulate, simulate_warped_experiment
from .warp import build_candidate_set, identity_warp

log = logging.getLogger("fmm")


class UsageError(Exception):
    pass


def read_config_file(path) -> dict:
    out = {}
    for num, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _kernels(text: str) -> tuple:
    names = tuple(k.strip().upper() for k in text.split(",") if k.strip())
    bad = [k for k in names if k not in FAMILIES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown kernel(s) {bad}; choose from {','.join(FAMILIES)}")
    return names


def _kernel(text: str) -> str:
    return _kernels(text)[0]


def _common(p, out_required=True):
    p.add_argument("--config", help="key=value file; command-line flags override it")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--knots", type=int, default=400, help="number of temporal knots")
    p.add_argument("-v", "--verbose", action="store_true")


def _track_args(p):
    p.add_argument("track", help="CSV with header time,x,y")
    p.add_argument("--no-standardize", action="store_true",
                   help="use positions as-is (times must already span [0, 1])")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmm", description="Functional movement models for telemetry tracks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a track with ground truth")
    _common(p)
    p.add_argument("--n-obs", type=int, default=300)
    p.add_argument("--missing", type=float, default=0.0, help="fraction of observations dropped")
    p.add_argument("--kernel", type=_kernel, default="G")
    p.add_argument("--phi", type=float, default=0.005)
    p.add_argument("--sigma2-s", type=float, default=0.001)
    p.add_argument("--sigma2", type=float, default=0.01)
    p.add_argument("--warped", action="store_true", help="canonical nonstationary scenario (G kernel)")

    p = sub.add_parser("warps", help="generate candidate warp fields")
    _common(p)
    p.add_argument("--per-combo", type=int, default=40)
    p.add_argument("--max-attempts", type=int, default=500)

    p = sub.add_parser("fit", help="fit one kernel/warp model")
    _common(p)
    _track_args(p)
    p.add_argument("--kernel", type=_kernel, required=True)
    p.add_argument("--warp-id", default="identity")
    p.add_argument("--warp-dir")
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--keep", type=int, default=1000, help="retained draws")
    p.add_argument("--dump-basis", help="write the basis matrix at the median phi to this CSV")

    p = sub.add_parser("bma", help="fit all models, average, predict and check")
    _common(p)
    _track_args(p)
    p.add_argument("--kernels", type=_kernels, default=FAMILIES)
    p.add_argument("--warp-dir")
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--keep", type=int, default=1000)
    p.add_argument("--paths", type=int, default=None, help="number of path draws (default: one per RJ iteration)")
    p.add_argument("--raw-units", action="store_true", help="write paths in the input's units")

    p = sub.add_parser("predict", help="sample paths from saved fits and a model chain")
    _common(p)
    _track_args(p)
    p.add_argument("--fits-dir", required=True, help="directory with fits/ and model_chain.csv")
    p.add_argument("--warp-dir")
    p.add_argument("--query-points", type=int, default=201)
    p.add_argument("--paths", type=int, default=None)

    p = sub.add_parser("diagnose", help="variograms of the data and of posterior residuals")
    _common(p)
    _track_args(p)
    p.add_argument("--paths-file", help="paths.csv sampled at the observation times")
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--max-lag", type=float, default=0.3)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_config_file(args.config)
        except (OSError, UsageError) as exc:
            parser.error(str(exc))
        sub = parser._subparsers._group_actions[0].choices[args.command]
        cli_dests = _explicit_dests(sub, argv if argv is not None else sys.argv[1:])
        actions = {a.dest: a for a in sub._actions}
        for key, raw in values.items():
            if key not in actions:
                parser.error(f"unknown config key {key!r}")
            if key in cli_dests:
                continue
            action = actions[key]
            if action.nargs == 0:
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    value = action.type(raw) if action.type else raw
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    parser.error(f"config key {key}: {exc}")
            setattr(args, key, value)
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    return args


def _explicit_dests(subparser, argv) -> set:
    flags = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            flags[opt] = action.dest
    out = set()
    for tok in argv:
        key = tok.split("=", 1)[0]
        if key in flags:
            out.add(flags[key])
    return out


def _load(args):
    records = load_track(args.track)
    if args.no_standardize:
        times = np.array([r.time for r in records])
        pos = np.array([[r.x, r.y] for r in records])
        if times[0] < 0 or times[-1] > 1:
            raise UsageError("--no-standardize needs times inside [0, 1]")
        return Track(times, pos), None
    track = standardize(records)
    return track, track.std


def _warps(args, needed=None):
    if not args.warp_dir:
        return [identity_warp()]
    warps = files.read_warp_set(args.warp_dir)
    if not any(w.is_identity for w in warps):
        warps.insert(0, identity_warp())
    if needed is not None:
        ids = {w.id for w in warps}
        missing = sorted(set(needed) - ids)
        if missing:
            raise UsageError(f"unknown warp id(s): {missing}")
    return warps


def cmd_simulate(args):
    out = Path(args.out)
    if args.warped:
        sim = simulate_warped_experiment(args.seed, args.n_obs, args.missing)
    else:
        kernel = KernelSpec(args.kernel, args.phi)
        sim = simulate(SimConfig(n_obs=args.n_obs, kernel=kernel, m_knots=args.knots, sigma2_s=args.sigma2_s,
                                 sigma2=args.sigma2, missingness=args.missing, seed=args.seed))
    files.write_track(out / "track.csv", sim.track.times, sim.track.positions)
    files.write_rows(out / "truth_path.csv", ["t", "x", "y"],
                     ((t, p[0], p[1]) for t, p in zip(sim.truth_times, sim.truth_path)), sim.meta)
    files.write_rows(out / "truth_params.csv", ["name", "value"],
                     ((k, str(v)) for k, v in sim.truth_params.items()))
    if not sim.warp_truth.is_identity:
        files.write_warp_set(out / "warp_truth", [sim.warp_truth])
    print(f"wrote {sim.track.n} observations to {out / 'track.csv'}")


def cmd_warps(args):
    warps = build_candidate_set(per_combo=args.per_combo, max_attempts=args.max_attempts, seed=args.seed,
                                workers=args.workers)
    files.write_warp_set(args.out, warps)
    print(f"wrote {len(warps)} warp fields ({len(warps) - 1} sampled + identity) to {args.out}")


def cmd_fit(args):
    track, _ = _load(args)
    warps = {w.id: w for w in _warps(args, [args.warp_id])}
    if args.warp_id not in warps:
        raise UsageError(f"unknown warp id {args.warp_id!r}; pass --warp-dir")
    warp = warps[args.warp_id]
    prior = PriorConfig()
    knots = KnotGrid.regular(args.knots)
    l = FAMILIES.index(args.kernel)
    j = [w.id for w in warps.values()].index(args.warp_id)
    spec = ModelSpec(args.kernel, args.warp_id, l, j)
    start = time.perf_counter()
    fit = fit_model(track, spec, prior, args.iters, model_seed(args.seed, l, j), knots,
                    None if warp.is_identity else warp, args.keep)
    path = files.write_fit(args.out, fit)
    if args.dump_basis:
        phi = float(np.median(fit.draws[:, 0])) if spec.has_phi else 0.0
        basis = build_basis(track.times, knots, KernelSpec(args.kernel, phi or 1.0), None if warp.is_identity else warp)
        files.write_basis_dump(args.dump_basis, basis)
    print(f"wrote {fit.n_draws} draws to {path} in {time.perf_counter() - start:.1f}s")


def _run_config(args) -> RunConfig:
    return RunConfig(m_knots=args.knots, n_iter=args.iters, n_keep=args.keep, kernels=tuple(args.kernels),
                     workers=args.workers, seed=args.seed, n_paths=args.paths)


def cmd_bma(args):
    track, std = _load(args)
    run = run_bma(track, _warps(args), _run_config(args), args.out, std if args.raw_units else None)
    for fam, p in run.result.kernel_probs.items():
        print(f"{fam}\t{p:.4f}")
    print("stage seconds: " + ", ".join(f"{k}={v:.1f}" for k, v in run.timings.items()))


def cmd_predict(args):
    track, std = _load(args)
    src = Path(args.fits_dir)
    fits = sorted((files.read_fit(p) for p in (src / "fits").glob("fit_*.csv")),
                  key=lambda f: (f.spec.l, f.spec.j))
    if not fits:
        raise UsageError(f"no fit files under {src / 'fits'}")
    chain = files.read_model_chain(src / "model_chain.csv")
    probs = np.bincount(chain, minlength=len(fits)) / chain.size
    result = BmaResult([f.spec for f in fits], probs, {}, chain, chain.size)
    result.kernel_probs = accumulate_kernel_probs(result)
    warps = {w.id: w for w in _warps(args)}
    query = np.union1d(track.times, np.linspace(0, 1, args.query_points))
    paths = sample_path(track, fits, result, query, seed=stage_seed(args.seed, 2),
                        knots=KnotGrid.regular(fits[0].meta.get("m_knots", args.knots)), warps=warps,
                        n_paths=args.paths)
    files.write_paths(args.out, paths, std)
    at_obs = np.searchsorted(query, track.times)
    obs = PathDraws(track.times, paths.draws[:, at_obs, :], paths.source)
    files.write_paths(args.out, obs, None, prefix="obs_")
    print(f"wrote {paths.draws.shape[0]} path draws to {args.out}")


def cmd_diagnose(args):
    track, _ = _load(args)
    out = Path(args.out)
    files.write_variogram(out / "variogram_data.csv",
                          empirical_variogram(track.positions, track.times, args.bins, args.max_lag))
    if args.paths_file:
        t, draws = files.read_paths(args.paths_file)
        paths = PathDraws(t, draws, np.zeros((draws.shape[0], 2), dtype=int))
        files.write_variogram(out / "variogram_residuals.csv",
                              residual_variogram_envelope(paths, track, args.bins, args.max_lag))
    print(f"wrote variograms to {out}")


COMMANDS = {
    "simulate": cmd_simulate,
    "warps": cmd_warps,
    "fit": cmd_fit,
    "bma": cmd_bma,
    "predict": cmd_predict,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fmm {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"fmm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
