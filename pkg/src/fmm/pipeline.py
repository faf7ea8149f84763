"""Batch orchestration: parallel model fits, model averaging, prediction, checks.

Seeds are derived from the master seed and each model's ``(l, j)`` index,
never from worker identity, so outputs do not depend on the worker count.
"""
from __future__ import annotations

import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import files
from .bma import averaged_warp_derivative, rjmcmc_average
from .diagnostics import DEFAULT_BINS, DEFAULT_MAX_LAG, empirical_variogram, residual_variogram_envelope
from .kernels import FAMILIES, KnotGrid
from .mcmc import ModelSpec, PriorConfig, fit_model
from .predict import PathDraws, sample_path
from .warp import identity_warp

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = failures or {}


@dataclass
class RunConfig:
    m_knots: int = 400
    n_iter: int = 10_000
    n_keep: int = 1000
    kernels: tuple = FAMILIES
    workers: int = 1
    seed: int = 0
    prior: PriorConfig = field(default_factory=PriorConfig)
    n_paths: int | None = None
    query_points: int = 201
    bins: int = DEFAULT_BINS
    max_lag: float = DEFAULT_MAX_LAG

    def describe(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "prior":
                out["phi_grid"] = f"{v.phi_grid[0]}:{v.phi_grid[-1]}:{v.phi_grid.size}"
                out["ratio_upper"] = v.ratio_upper
                out["ig_shape"] = v.ig_shape
                out["ig_scale"] = v.ig_scale
                out["ig_convention"] = "shape-scale"
            elif isinstance(v, tuple):
                out[f.name] = ",".join(v)
            else:
                out[f.name] = v
        return out


def model_seed(master: int, l: int, j: int) -> int:
    return int(np.random.SeedSequence([master, l, j]).generate_state(1)[0])


def stage_seed(master: int, stage: int) -> int:
    return int(np.random.SeedSequence([master, 1_000_003, stage]).generate_state(1)[0])


def _fit_job(args):
    track, spec, warp, config = args
    try:
        fit = fit_model(track, spec, config.prior, config.n_iter, model_seed(config.seed, spec.l, spec.j),
                        KnotGrid.regular(config.m_knots), warp, config.n_keep)
        return spec, fit, None
    except Exception:  # reported per model by the caller
        return spec, None, traceback.format_exc()


def model_specs(kernels, warps) -> list[tuple[ModelSpec, object]]:
    out = []
    for fam in kernels:
        l = FAMILIES.index(fam)
        for j, w in enumerate(warps):
            out.append((ModelSpec(fam, w.id, l, j), None if w.is_identity else w))
    return out


def fit_all(track, warps, config: RunConfig, fit_dir=None):
    """Fit every (kernel, warp) model; write each fit as it completes."""
    jobs = [(track, spec, warp, config) for spec, warp in model_specs(config.kernels, warps)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_fit_job, jobs, chunksize=1))
    else:
        results = [_fit_job(job) for job in jobs]
    fits, failures = [], {}
    for spec, fit, err in results:
        if err is not None:
            failures[spec.name] = err
            continue
        if fit_dir is not None:
            files.write_fit(fit_dir, fit)
        fits.append(fit)
    if failures:
        raise PipelineError(f"{len(failures)} of {len(jobs)} model fits failed: {sorted(failures)}", failures)
    return fits


@dataclass
class BmaRun:
    fits: list
    result: object
    paths: PathDraws
    obs_paths: PathDraws
    data_variogram: object
    residual_variogram: object
    warp_grid: np.ndarray
    warp_derivative: np.ndarray
    timings: dict
    written: list = field(default_factory=list)


def run_bma(track, warps=None, config: RunConfig | None = None, out_dir=None, std=None) -> BmaRun:
    """Full pipeline: fits, model averaging, path sampling and variograms."""
    config = config or RunConfig()
    warps = list(warps) if warps else [identity_warp()]
    warps_by_id = {w.id: w for w in warps}
    out = Path(out_dir) if out_dir is not None else None
    timings = {}
    written = []

    t0 = time.perf_counter()
    fits = fit_all(track, warps, config, out / "fits" if out else None)
    timings["fit"] = time.perf_counter() - t0
    if out:
        written += sorted((out / "fits").glob("fit_*.csv"))

    t0 = time.perf_counter()
    result = rjmcmc_average(fits, config.prior, seed=stage_seed(config.seed, 1))
    grid, dwdt = averaged_warp_derivative(result, warps_by_id)
    timings["bma"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    dense = np.linspace(0.0, 1.0, config.query_points)
    query = np.union1d(track.times, dense)
    knots = KnotGrid.regular(config.m_knots)
    paths = sample_path(track, fits, result, query, seed=stage_seed(config.seed, 2), knots=knots,
                        warps=warps_by_id, n_paths=config.n_paths)
    at_obs = np.searchsorted(query, track.times)
    obs_paths = PathDraws(track.times, paths.draws[:, at_obs, :], paths.source)
    timings["predict"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    data_vg = empirical_variogram(track.positions, track.times, config.bins, config.max_lag)
    resid_vg = residual_variogram_envelope(obs_paths, track, config.bins, config.max_lag)
    timings["diagnose"] = time.perf_counter() - t0

    if out:
        written += files.write_bma(out, result, warps_by_id)
        written.append(files.write_rows(out / "warp_derivative.csv", ["t", "dwdt"], zip(grid, dwdt)))
        written += files.write_paths(out, paths, std)
        written.append(files.write_variogram(out / "variogram_data.csv", data_vg))
        written.append(files.write_variogram(out / "variogram_residuals.csv", resid_vg))
        files.write_manifest(out, written, config.describe(), timings)

    return BmaRun(fits, result, paths, obs_paths, data_vg, resid_vg, grid, dwdt, timings, written)
