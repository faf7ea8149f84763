"""Candidate temporal warp fields.

A warp field is a draw ``w ~ N(t, Sigma_w)`` with squared-exponential
covariance ``sigma_w**2 * exp(-(t_i - t_j)**2 / phi_w**2)`` on a dense grid.
Only draws that keep the time order (strictly increasing on the grid) are
retained; everything else is rejected.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .gauss import jittered_cholesky

log = logging.getLogger(__name__)

GRID_SIZE = 401
PARAM_LEVELS = np.linspace(0.001, 1.0, 10)


class CandidateSetError(RuntimeError):
    """No warp field survived rejection sampling."""


@dataclass(frozen=True)
class WarpParams:
    sigma_w: float
    phi_w: float

    def __post_init__(self):
        for name in ("sigma_w", "phi_w"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class WarpField:
    id: str
    grid_times: np.ndarray
    values: np.ndarray
    params: WarpParams | None = None
    derivative: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        grid = np.asarray(self.grid_times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.shape != values.shape or grid.ndim != 1:
            raise ValueError("grid_times and values must be vectors of equal length")
        object.__setattr__(self, "grid_times", grid)
        object.__setattr__(self, "values", values)
        if self.derivative is None:
            object.__setattr__(self, "derivative", np.gradient(values, grid, edge_order=1))

    @property
    def is_identity(self) -> bool:
        return self.id == "identity"

    def evaluate(self, t):
        """Warped times by linear interpolation on the grid."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.grid_times[0], self.grid_times[-1]
        eps = 1e-12
        if np.any(t < lo - eps) or np.any(t > hi + eps):
            raise ValueError(f"warp {self.id} is defined on [{lo}, {hi}] only")
        return np.interp(t, self.grid_times, self.values)


def default_grid(size: int = GRID_SIZE) -> np.ndarray:
    return np.linspace(0.0, 1.0, size)


def identity_warp(grid_times=None) -> WarpField:
    grid = default_grid() if grid_times is None else np.asarray(grid_times, dtype=float)
    return WarpField("identity", grid, grid.copy(), None, np.ones_like(grid))


def is_non_folding(values) -> bool:
    return bool(np.all(np.diff(values) > 0))


def warp_covariance(params: WarpParams, grid_times) -> np.ndarray:
    d = np.subtract.outer(grid_times, grid_times)
    return params.sigma_w**2 * np.exp(-(d**2) / params.phi_w**2)


def warp_derivative(warp: WarpField) -> np.ndarray:
    """Central differences inside the grid, one-sided at the two ends."""
    if warp.is_identity:
        return np.ones_like(warp.grid_times)
    return np.gradient(warp.values, warp.grid_times, edge_order=1)


def _draw(params, grid_times, chol, rng, warp_id):
    values = grid_times + chol @ rng.standard_normal(grid_times.size)
    if not is_non_folding(values):
        return None
    return WarpField(warp_id, grid_times, values, params)


def sample_warp(params: WarpParams, grid_times=None, seed=None, warp_id: str = "w") -> WarpField | None:
    """One draw from the warp process; ``None`` when the draw folds."""
    grid_times = default_grid() if grid_times is None else np.asarray(grid_times, dtype=float)
    if grid_times.size < 50 or np.any(np.diff(grid_times) <= 0):
        raise ValueError("grid_times must be strictly increasing with at least 50 points")
    chol = jittered_cholesky(warp_covariance(params, grid_times))
    return _draw(params, grid_times, chol, np.random.default_rng(seed), warp_id)


def _cell(level_index: int, levels: np.ndarray):
    half = (levels[1] - levels[0]) / 2 if levels.size > 1 else 0.0
    center = levels[level_index]
    return max(levels[0], center - half), min(levels[-1], center + half)


def _combo_warps(args):
    combo, si, pj, levels, per_combo, max_attempts, seed, grid_times = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, combo]))
    s_lo, s_hi = _cell(si, levels)
    p_lo, p_hi = _cell(pj, levels)
    design = qmc.LatinHypercube(d=2, seed=rng).random(per_combo)
    sig = s_lo + design[:, 0] * (s_hi - s_lo)
    phi = p_lo + design[:, 1] * (p_hi - p_lo)

    out = []
    attempts = 0
    for k in range(per_combo):
        params = WarpParams(float(sig[k]), float(phi[k]))
        chol = jittered_cholesky(warp_covariance(params, grid_times))
        while attempts < max_attempts:
            attempts += 1
            warp = _draw(params, grid_times, chol, rng, f"c{combo:03d}k{k:03d}")
            if warp is not None:
                out.append(warp)
                break
        if attempts >= max_attempts:
            break
    return combo, out, attempts


def build_candidate_set(
    param_levels=None,
    per_combo: int = 40,
    max_attempts: int = 500,
    seed: int = 0,
    grid_times=None,
    workers: int = 1,
) -> list[WarpField]:
    """Rejection-sample non-folding warps over a grid of ``(sigma_w, phi_w)``.

    Each of the ``len(levels)**2`` combinations gets up to ``per_combo``
    accepted warps, with parameters jittered inside the combination's grid
    cell by a Latin hypercube design. A combination stops after
    ``max_attempts`` draws in total. The identity warp is always first.
    """
    if per_combo < 1:
        raise ValueError("per_combo must be >= 1")
    levels = PARAM_LEVELS if param_levels is None else np.asarray(param_levels, dtype=float)
    grid_times = default_grid() if grid_times is None else np.asarray(grid_times, dtype=float)
    jobs = [
        (si * levels.size + pj, si, pj, levels, per_combo, max_attempts, seed, grid_times)
        for si in range(levels.size)
        for pj in range(levels.size)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_combo_warps, jobs))
    else:
        results = [_combo_warps(job) for job in jobs]

    warps = [identity_warp(grid_times)]
    short = 0
    for combo, accepted, attempts in sorted(results, key=lambda r: r[0]):
        if len(accepted) < per_combo:
            log.info(
                "warp combo %d (sigma_w=%.3f, phi_w=%.3f): %d/%d accepted after %d attempts",
                combo, levels[combo // levels.size], levels[combo % levels.size],
                len(accepted), per_combo, attempts,
            )
            short += 1
        warps.extend(accepted)
    if short:
        log.warning("%d of %d warp combinations were exhausted before reaching %d accepted fields",
                    short, len(jobs), per_combo)
    if len(warps) == 1:
        raise CandidateSetError("every warp combination was exhausted without an accepted field")
    return warps
