"""Functional movement models for animal telemetry.

Continuous-time trajectories are built by smoothing Brownian motion with a
kernel, approximated with a reduced-rank basis on fixed knots, optionally
deformed by a monotone time warp, fit by MCMC with the latent process
integrated out, and combined across kernels and warps by model averaging.
"""
from .bma import BmaResult, rjmcmc_average
from .diagnostics import Variogram, empirical_variogram, residual_variogram_envelope
from .ingest import StandardizedTrack, Track, load_track, standardize
from .kernels import FAMILIES, KernelSpec, KnotGrid, build_basis
from .mcmc import ModelFit, ModelSpec, PriorConfig, fit_model
from .pipeline import RunConfig, run_bma
from .predict import PathDraws, sample_path
from .sim import SimConfig, simulate
from .warp import WarpField, WarpParams, build_candidate_set, sample_warp

__all__ = [
    "BmaResult", "rjmcmc_average", "Variogram", "empirical_variogram", "residual_variogram_envelope",
    "StandardizedTrack", "Track", "load_track", "standardize", "FAMILIES", "KernelSpec", "KnotGrid",
    "build_basis", "ModelFit", "ModelSpec", "PriorConfig", "fit_model", "RunConfig", "run_bma",
    "PathDraws", "sample_path", "SimConfig", "simulate", "WarpField", "WarpParams",
    "build_candidate_set", "sample_warp",
]
__version__ = "0.1.0"
