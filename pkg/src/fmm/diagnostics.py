"""Empirical variograms and chain summaries for model checking."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

DEFAULT_BINS = 15
DEFAULT_MAX_LAG = 0.3


@dataclass
class Variogram:
    lag_centers: np.ndarray
    semivariance: np.ndarray  # NaN marks empty bins
    counts: np.ndarray
    max_lag: float
    envelope: np.ndarray | None = None  # (B, 2) pointwise lo/hi across draws
    draws: np.ndarray | None = None  # (R, B) per-draw curves

    @property
    def bins(self) -> int:
        return self.lag_centers.size


def _pair_bins(times, bins: int, max_lag: float):
    i, k = np.triu_indices(times.size, k=1)
    lag = np.abs(times[k] - times[i])
    inside = lag <= max_lag
    i, k, lag = i[inside], k[inside], lag[inside]
    width = max_lag / bins
    b = np.minimum((lag / width).astype(int), bins - 1)
    return i, k, b


def empirical_variogram(values, times, bins: int = DEFAULT_BINS, max_lag: float = DEFAULT_MAX_LAG) -> Variogram:
    """Classical (Matheron) semivariogram over equal-width lag bins.

    Two-column input yields the average of the per-coordinate semivariances.
    """
    if not max_lag > 0:
        raise ValueError("max_lag must be positive")
    if bins < 5:
        raise ValueError("need at least 5 bins")
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    i, k, b = _pair_bins(times, bins, max_lag)
    sq = np.mean((values[i] - values[k]) ** 2, axis=1)
    counts = np.bincount(b, minlength=bins)
    sums = np.bincount(b, weights=sq, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, sums / (2.0 * counts), np.nan)
    width = max_lag / bins
    centers = (np.arange(bins) + 0.5) * width
    return Variogram(centers, gamma, counts, max_lag)


def residual_variogram_envelope(paths, track, bins: int = DEFAULT_BINS, max_lag: float = DEFAULT_MAX_LAG,
                                level: float = 0.95) -> Variogram:
    """Variograms of posterior predictive residuals, one per path draw.

    The central curve is the pointwise median; the envelope is the central
    ``level`` band across draws.
    """
    from .predict import posterior_residuals

    resid = posterior_residuals(track, paths)
    if resid.shape[0] < 20:
        warnings.warn(f"only {resid.shape[0]} path draws; variogram envelope is unreliable", stacklevel=2)
    times = np.asarray(track.times, dtype=float)
    i, k, b = _pair_bins(times, bins, max_lag)
    counts = np.bincount(b, minlength=bins)
    curves = np.empty((resid.shape[0], bins))
    for r in range(resid.shape[0]):
        sq = np.mean((resid[r][i] - resid[r][k]) ** 2, axis=1)
        sums = np.bincount(b, weights=sq, minlength=bins)
        with np.errstate(invalid="ignore", divide="ignore"):
            curves[r] = np.where(counts > 0, sums / (2.0 * counts), np.nan)
    tail = (1.0 - level) / 2.0
    lo, med, hi = np.quantile(curves, [tail, 0.5, 1.0 - tail], axis=0)
    centers = (np.arange(bins) + 0.5) * (max_lag / bins)
    return Variogram(centers, med, counts, max_lag, np.column_stack([lo, hi]), curves)


def chain_summary(fit, level: float = 0.95) -> dict:
    """Posterior means, central intervals and acceptance rates of one fit."""
    tail = (1.0 - level) / 2.0
    out = {"model": fit.spec.name, "n_draws": fit.n_draws}
    for col, name in enumerate(("phi", "sigma2_s", "sigma_ratio")):
        x = fit.draws[:, col]
        lo, hi = np.quantile(x, [tail, 1.0 - tail])
        out[name] = {"mean": float(x.mean()), "lo": float(lo), "hi": float(hi)}
    out["acceptance"] = dict(fit.acceptance)
    return out
