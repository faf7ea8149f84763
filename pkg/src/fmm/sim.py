"""Synthetic tracks drawn from the functional movement model.

The latent path is ``mu(t) = mu(0) + H(w(t)) eps`` with ``eps`` i.i.d.
``N(0, sigma2)`` per knot and coordinate (the time step is absorbed into
``sigma2``), observed on a regular grid with random dropout and Gaussian
measurement error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import Track
from .kernels import KernelSpec, KnotGrid, build_basis
from .warp import PARAM_LEVELS, WarpParams, default_grid, identity_warp, sample_warp

# truth used by the stationary and warped experiments
TRUTH_SIGMA2_S = 0.001
TRUTH_SIGMA2 = 0.01
TRUTH_PHI = 0.005
# canonical warp parameters: the 6th of the 10 grid levels for both
CANONICAL_WARP = WarpParams(float(PARAM_LEVELS[5]), float(PARAM_LEVELS[5]))


@dataclass(frozen=True)
class SimConfig:
    n_obs: int = 300
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("G", TRUTH_PHI))
    m_knots: int = 400
    sigma2_s: float = TRUTH_SIGMA2_S
    sigma2: float = TRUTH_SIGMA2
    warp: object = None
    missingness: float = 0.0
    seed: int = 0
    truth_grid_size: int = 1001

    def __post_init__(self):
        if self.n_obs < 10:
            raise ValueError("n_obs must be >= 10")
        if not 0 <= self.missingness < 1:
            raise ValueError("missingness must be in [0, 1)")
        if self.sigma2_s < 0 or self.sigma2 < 0:
            raise ValueError("variances must be non-negative")
        if self.m_knots < 2:
            raise ValueError("m_knots must be >= 2")


@dataclass
class SimOutput:
    track: Track
    truth_times: np.ndarray
    truth_path: np.ndarray
    truth_at_obs: np.ndarray
    truth_params: dict
    warp_truth: object
    eps: np.ndarray
    meta: dict = field(default_factory=dict)


def simulate(config: SimConfig) -> SimOutput:
    rng = np.random.default_rng(config.seed)
    knots = KnotGrid.regular(config.m_knots)
    warp = config.warp if config.warp is not None else identity_warp()

    eps = math.sqrt(config.sigma2) * rng.standard_normal((knots.m, 2))
    full = np.linspace(0.0, 1.0, config.n_obs)
    n_drop = int(round(config.missingness * config.n_obs))
    keep = np.sort(rng.choice(config.n_obs, size=config.n_obs - n_drop, replace=False))
    times = full[keep]

    mu0 = np.zeros(2)
    truth_at_obs = mu0 + build_basis(times, knots, config.kernel, warp).H @ eps
    noise = math.sqrt(config.sigma2_s) * rng.standard_normal(truth_at_obs.shape)
    truth_times = np.linspace(0.0, 1.0, config.truth_grid_size)
    truth_path = mu0 + build_basis(truth_times, knots, config.kernel, warp).H @ eps

    ratio2 = config.sigma2 / config.sigma2_s if config.sigma2_s > 0 else math.inf
    params = {
        "family": config.kernel.family,
        "phi": config.kernel.phi if config.kernel.has_phi else 0.0,
        "sigma2_s": config.sigma2_s,
        "sigma2": config.sigma2,
        "sigma2_ratio": ratio2,
        "sigma_ratio": math.sqrt(ratio2),
    }
    meta = {
        "time_design": "regular grid on [0,1] with uniform random dropout",
        "mu0": "0,0",
        "m_knots": config.m_knots,
        "seed": config.seed,
        "warp_id": warp.id,
    }
    return SimOutput(Track(times, truth_at_obs + noise), truth_times, truth_path,
                     truth_at_obs, params, warp, eps, meta)


def canonical_warp(seed: int = 0, max_attempts: int = 10_000):
    """First draw at :data:`CANONICAL_WARP` that neither folds nor leaves ``[0, 1]``.

    Warped times outside the knot span freeze the path (every basis entry
    is 0 or 1 there), which would leave part of the true warp unobservable.
    """
    grid = default_grid()
    ss = np.random.SeedSequence([seed, 7919])
    for child in ss.spawn(max_attempts):
        warp = sample_warp(CANONICAL_WARP, grid, np.random.default_rng(child), warp_id="truth")
        if warp is not None and warp.values[0] >= 0.0 and warp.values[-1] <= 1.0:
            return warp
    raise RuntimeError("no non-folding canonical warp within the attempt budget")


def simulate_warped_experiment(seed: int = 0, n_obs: int = 300, missingness: float = 0.0) -> SimOutput:
    """Nonstationary scenario: stationary truth parameters under one random warp."""
    warp = canonical_warp(seed)
    cfg = SimConfig(n_obs=n_obs, warp=warp, missingness=missingness, seed=seed)
    return simulate(cfg)
