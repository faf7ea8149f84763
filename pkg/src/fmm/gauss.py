"""Gaussian machinery for the integrated (latent-path-free) likelihood.

Per coordinate the data covariance is ``sigma2_s * (I_n + c * H H')`` with
``c = sigma2_ratio``. Both coordinates share it, so every quantity is
computed once and applied to the two residual columns.

Two routes evaluate the same density:

* :func:`loglik_integrated` uses the Sherman-Morrison-Woodbury identity and
  the matrix determinant lemma with a Cholesky factor of the ``m x m`` matrix
  ``I_m + c H'H``. This is the reference route.
* :class:`LikelihoodWorkspace` diagonalizes ``H H'`` once per basis, after
  which each evaluation costs ``O(min(n, m))``. The MCMC uses this one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

LOG_2PI = math.log(2.0 * math.pi)


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky failed even after the jitter ladder."""


def jittered_cholesky(A, jitter: float = 1e-10, max_jitter: float = 1e-6) -> np.ndarray:
    """Lower Cholesky factor of ``A + j I`` for the smallest ``j`` on the ladder.

    The ladder is ``jitter, 10 * jitter, ...`` up to ``max_jitter``. Pass
    ``jitter=0`` to try the unperturbed matrix first.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise FactorizationError("matrix has non-finite entries")
    ladder = [0.0] if jitter == 0 else []
    j = jitter if jitter > 0 else 1e-10
    while j <= max_jitter * (1 + 1e-9):
        ladder.append(j)
        j *= 10
    eye = np.eye(A.shape[0])
    for j in ladder:
        try:
            return linalg.cholesky(A + j * eye if j else A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
    raise FactorizationError(f"Cholesky failed with jitter up to {max_jitter}")


def _basis_array(basis) -> np.ndarray:
    return np.asarray(getattr(basis, "H", basis), dtype=float)


@dataclass(frozen=True)
class IntegratedCovariance:
    sigma2_s: float
    sigma2_ratio: float
    basis: object  # BasisMatrix or a plain (n, m) array

    def __post_init__(self):
        if not (np.isfinite(self.sigma2_s) and self.sigma2_s > 0):
            raise FactorizationError(f"sigma2_s must be positive and finite, got {self.sigma2_s}")
        if not (np.isfinite(self.sigma2_ratio) and self.sigma2_ratio >= 0):
            raise FactorizationError(f"sigma2_ratio must be non-negative, got {self.sigma2_ratio}")

    @property
    def H(self) -> np.ndarray:
        return _basis_array(self.basis)

    def dense(self) -> np.ndarray:
        """Full ``n x n`` per-coordinate covariance (for checks only)."""
        H = self.H
        return self.sigma2_s * (np.eye(H.shape[0]) + self.sigma2_ratio * H @ H.T)

    def _inner_factor(self):
        H = self.H
        inner = np.eye(H.shape[1]) + self.sigma2_ratio * (H.T @ H)
        return jittered_cholesky(inner, jitter=0.0)


def smw_inverse_apply(cov: IntegratedCovariance, v) -> np.ndarray:
    """Apply ``(sigma2_s (I + c H H'))^{-1}`` to ``v`` via Woodbury."""
    v = np.asarray(v, dtype=float)
    H = cov.H
    if v.shape[0] != H.shape[0]:
        raise ValueError(f"v has length {v.shape[0]}, basis has {H.shape[0]} rows")
    c = cov.sigma2_ratio
    if c == 0:
        return v / cov.sigma2_s
    L = cov._inner_factor()
    Htv = H.T @ v
    inner = linalg.cho_solve((L, True), Htv, check_finite=False)
    return (v - c * (H @ inner)) / cov.sigma2_s


def logdet_integrated(cov: IntegratedCovariance) -> float:
    """Per-coordinate ``log det(sigma2_s (I_n + c H H'))`` by the determinant lemma."""
    n = cov.H.shape[0]
    base = n * math.log(cov.sigma2_s)
    if cov.sigma2_ratio == 0:
        return base
    L = cov._inner_factor()
    return base + 2.0 * float(np.sum(np.log(np.diag(L))))


def loglik_integrated(track, mu0, cov: IntegratedCovariance) -> float:
    """Exact log-density of the observed positions with the path integrated out.

    ``track`` needs ``positions`` (n x 2); the basis rows must correspond to
    the observation times.
    """
    s = np.asarray(getattr(track, "positions", track), dtype=float)
    resid = s - np.asarray(mu0, dtype=float)[None, :]
    n = resid.shape[0]
    if cov.H.shape[0] != n:
        raise ValueError("basis rows do not match the number of observations")
    logdet = logdet_integrated(cov)
    quad = np.sum(resid * smw_inverse_apply(cov, resid), axis=0)
    return float(np.sum(-0.5 * (n * LOG_2PI + logdet + quad)))


@dataclass(frozen=True)
class SpectralBasis:
    """Non-zero spectrum of ``H H'``: ``H H' = U diag(lam) U'``."""

    lam: np.ndarray  # (k,)
    U: np.ndarray  # (n, k)

    @classmethod
    def from_basis(cls, basis) -> "SpectralBasis":
        H = _basis_array(basis)
        n, m = H.shape
        if n <= m:
            lam, U = linalg.eigh(H @ H.T, check_finite=False)
        else:
            lam, V = linalg.eigh(H.T @ H, check_finite=False)
            keep = lam > lam.max() * 1e-14 if lam.size and lam.max() > 0 else np.zeros(lam.size, bool)
            lam, V = lam[keep], V[:, keep]
            U = (H @ V) / np.sqrt(lam)
        lam = np.clip(lam, 0.0, None)
        lam.setflags(write=False)
        U.setflags(write=False)
        return cls(lam, U)

    @property
    def nbytes(self) -> int:
        return self.lam.nbytes + self.U.nbytes


class LikelihoodWorkspace:
    """Repeated likelihood evaluations at a fixed basis and fixed data.

    Projections of the residuals onto the eigenvectors of ``H H'`` are
    cached, so changing ``sigma2_s`` or ``sigma2_ratio`` needs no matrix work.
    """

    def __init__(self, spectral: SpectralBasis, resid, basis=None):
        resid = np.asarray(resid, dtype=float)
        self.n = resid.shape[0]
        if spectral.U.shape[0] != self.n:
            raise ValueError("spectral basis does not match the data length")
        self.lam = spectral.lam
        self.proj2 = (spectral.U.T @ resid) ** 2  # (k, 2)
        self.rr = np.sum(resid**2, axis=0)  # (2,)
        self._basis = basis

    @cached_property
    def gram(self) -> np.ndarray:
        if self._basis is None:
            raise AttributeError("workspace was built without the basis matrix")
        H = _basis_array(self._basis)
        return H.T @ H

    def loglik(self, sigma2_s: float, sigma2_ratio: float) -> float:
        t = sigma2_ratio * self.lam
        logdet = self.n * math.log(sigma2_s) + float(np.sum(np.log1p(t)))
        shrink = t / (1.0 + t)
        quad = (self.rr - shrink @ self.proj2) / sigma2_s
        return float(np.sum(-0.5 * (self.n * LOG_2PI + logdet + quad)))


def mvn_sample(mean, cov=None, factor=None, seed=None, size: int | None = None) -> np.ndarray:
    """Draw from ``N(mean, cov)``.

    Give either the full covariance ``cov`` (factorized with the jitter
    ladder) or a ``factor`` ``F`` with ``cov = F F'`` (any number of
    columns, e.g. a low-rank description). Returns shape ``(k,)`` or
    ``(size, k)``.
    """
    mean = np.asarray(mean, dtype=float)
    rng = np.random.default_rng(seed)
    shape = (size,) if size is not None else ()
    if factor is None:
        if cov is None:
            raise ValueError("need cov or factor")
        cov = np.asarray(cov, dtype=float)
        if not np.any(cov):
            return np.broadcast_to(mean, shape + mean.shape).copy()
        factor = jittered_cholesky(cov, jitter=0.0)
    factor = np.asarray(factor, dtype=float)
    z = rng.standard_normal(shape + (factor.shape[1],))
    return mean + z @ factor.T
