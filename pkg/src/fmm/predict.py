"""Composition sampling of the latent path after model averaging.

For each retained RJ iteration the sampled model and its parameter draw fix
``(H, sigma2_s, sigma2)``. The knot weights then have the Gaussian full
conditional

    eps | s ~ N(S H' r / sigma2_s, S),   S = (H'H / sigma2_s + I / sigma2)^{-1}

per coordinate, with ``r`` the observations minus ``mu0``. Draws are made
with the prior-plus-correction form of this conditional using the spectrum
of ``H H'``, which stays stable as ``sigma2_s`` goes to zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gauss import SpectralBasis
from .kernels import KernelSpec, KnotGrid, build_basis


@dataclass
class PathDraws:
    query_times: np.ndarray
    draws: np.ndarray  # (R, q, 2)
    source: np.ndarray  # (R, 2): model index, parameter-draw index

    def __post_init__(self):
        if self.draws.ndim != 3 or self.draws.shape[0] < 1:
            raise ValueError("need at least one path draw")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("path draws contain non-finite values")

    def summary(self, level: float = 0.95) -> dict:
        """Pointwise mean and central credible band per coordinate."""
        tail = (1.0 - level) / 2.0
        lo, hi = np.quantile(self.draws, [tail, 1.0 - tail], axis=0)
        return {"t": self.query_times, "mean": self.draws.mean(axis=0), "lo": lo, "hi": hi}


def conditional_eps(H_obs, spectral: SpectralBasis, resid, sigma2_s: float, sigma2: float, rng):
    """One draw of the knot weights (m x 2) given the data residuals."""
    m = H_obs.shape[1]
    if sigma2 == 0:
        return np.zeros((m, resid.shape[1]))
    prior_eps = math.sqrt(sigma2) * rng.standard_normal((m, resid.shape[1]))
    noise = math.sqrt(sigma2_s) * rng.standard_normal(resid.shape)
    gap = resid - H_obs @ prior_eps - noise
    # (sigma2 H H' + sigma2_s I)^{-1} gap, split into the range of U and its complement
    U, lam = spectral.U, spectral.lam
    coef = U.T @ gap
    solved = U @ (coef / (sigma2 * lam + sigma2_s)[:, None])
    if U.shape[1] < U.shape[0]:
        solved += (gap - U @ coef) / sigma2_s
    return prior_eps + sigma2 * (H_obs.T @ solved)


def sample_path_given(track, H_obs, H_query, sigma2_s: float, sigma2: float, mu0, seed=None,
                      size: int = 1, spectral: SpectralBasis | None = None) -> np.ndarray:
    """``size`` path draws at the query rows for fixed parameters, shape (size, q, 2)."""
    rng = np.random.default_rng(seed)
    mu0 = np.asarray(mu0, dtype=float)
    resid = track.positions - mu0
    spectral = spectral or SpectralBasis.from_basis(H_obs)
    out = np.empty((size, H_query.shape[0], 2))
    for r in range(size):
        eps = conditional_eps(H_obs, spectral, resid, sigma2_s, sigma2, rng)
        out[r] = mu0 + H_query @ eps
    return out


def sample_path(track, fits, result, query_times, seed=None, knots: KnotGrid | None = None,
                warps=None, n_paths: int | None = None) -> PathDraws:
    """One path per retained RJ iteration (or ``n_paths`` evenly spaced ones).

    ``warps`` maps warp id to warp field; missing ids other than
    ``"identity"`` are an error.
    """
    query_times = np.asarray(query_times, dtype=float)
    if np.any(query_times < 0) or np.any(query_times > 1):
        raise ValueError("query_times must lie in [0, 1]")
    knots = knots or KnotGrid.regular(fits[0].meta.get("m_knots", 400))
    warps = warps or {}
    iters = np.arange(result.n_rj_iter)
    if n_paths is not None and n_paths < iters.size:
        iters = np.unique(np.linspace(0, result.n_rj_iter - 1, n_paths).round().astype(int))

    cache = {}
    draws = np.empty((iters.size, query_times.size, 2))
    source = np.empty((iters.size, 2), dtype=int)
    ss = np.random.SeedSequence(0 if seed is None else seed)
    for row, k in enumerate(iters):
        model = int(result.model_chain[k])
        fit = fits[model]
        phi, s2, ratio = fit.draws[k]
        key = (model, phi)
        if key not in cache:
            spec = fit.spec
            warp = None if spec.warp_id == "identity" else warps[spec.warp_id]
            kernel = KernelSpec(spec.kernel_family, float(phi))
            H_obs = build_basis(track.times, knots, kernel, warp).H
            H_q = build_basis(query_times, knots, kernel, warp).H
            cache[key] = (H_obs, H_q, SpectralBasis.from_basis(H_obs))
        H_obs, H_q, spectral = cache[key]
        rng = np.random.default_rng(np.random.SeedSequence([ss.entropy, int(k)]))
        resid = track.positions - fit.mu0
        eps = conditional_eps(H_obs, spectral, resid, s2, ratio * ratio * s2, rng)
        draws[row] = fit.mu0 + H_q @ eps
        source[row] = (model, k)
    return PathDraws(query_times, draws, source)


def posterior_residuals(track, paths: PathDraws) -> np.ndarray:
    """Observations minus each path draw at the observation times, (R, n, 2)."""
    if paths.query_times.shape != track.times.shape or not np.allclose(paths.query_times, track.times,
                                                                         rtol=0, atol=1e-12):
        raise ValueError("path query times must equal the observation times")
    return track.positions[None, :, :] - paths.draws
