"""Metropolis-within-Gibbs fit of one functional movement model.

A model is a kernel family paired with one warp field. The chain runs over
``theta = (phi, sigma2_s, sigma_ratio)`` where ``sigma_ratio`` is the square
root of the process-to-error variance ratio. Priors:

* ``phi`` discrete uniform on ``phi_grid`` (absent for BM and IBM),
* ``sigma2_s ~ IG(shape, scale)`` in the shape/scale convention, so its
  prior mean is ``scale / (shape - 1)``,
* ``sigma_ratio ~ U(0, ratio_upper)``.

Bases for every ``phi`` are built and diagonalized up front; the chain then
only evaluates cheap spectral likelihoods.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gauss import IntegratedCovariance, LikelihoodWorkspace, SpectralBasis, loglik_integrated
from .kernels import FAMILIES, BasisMatrix, KernelSpec, KnotGrid, build_basis

PHI_NEIGHBORS = 5
ADAPT_BATCH = 50
DEFAULT_MEMORY_CAP = 2 * 1024**3


class ChainError(RuntimeError):
    """The chain rejected every proposal after adaptation."""


class MemoryBudgetError(MemoryError):
    """A basis store would exceed the configured memory cap."""


@dataclass(frozen=True)
class PriorConfig:
    phi_grid: np.ndarray = field(default_factory=lambda: np.linspace(0.001, 0.1, 100))
    ratio_upper: float = 20.0
    ig_shape: float = 12.0
    ig_scale: float = 0.01
    model_prior: np.ndarray | None = None

    def __post_init__(self):
        grid = np.asarray(self.phi_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0) or np.any(grid <= 0):
            raise ValueError("phi_grid must be positive and strictly increasing")
        object.__setattr__(self, "phi_grid", grid)
        if not self.ig_shape > 1:
            raise ValueError("ig_shape must exceed 1")
        if not (self.ig_scale > 0 and self.ratio_upper > 0):
            raise ValueError("ig_scale and ratio_upper must be positive")
        if self.model_prior is not None:
            p = np.asarray(self.model_prior, dtype=float)
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError("model_prior must be a probability vector")
            object.__setattr__(self, "model_prior", p)

    @property
    def sigma2_s_prior_mean(self) -> float:
        return self.ig_scale / (self.ig_shape - 1.0)

    def log_ig(self, x: float) -> float:
        a, b = self.ig_shape, self.ig_scale
        return a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(x) - b / x

    def log_prior(self, has_phi: bool, sigma2_s: float, sigma_ratio: float) -> float:
        """Log prior density of ``theta`` (natural parameterization)."""
        if not (sigma2_s > 0 and 0 < sigma_ratio < self.ratio_upper):
            return -math.inf
        lp = self.log_ig(sigma2_s) - math.log(self.ratio_upper)
        if has_phi:
            lp -= math.log(self.phi_grid.size)
        return lp


@dataclass(frozen=True)
class ModelSpec:
    kernel_family: str
    warp_id: str = "identity"
    l: int = 0
    j: int = 0

    def __post_init__(self):
        if self.kernel_family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.kernel_family!r}")

    @property
    def has_phi(self) -> bool:
        return KernelSpec(self.kernel_family, 1.0).has_phi

    @property
    def name(self) -> str:
        return f"{self.kernel_family}_{self.warp_id}"


@dataclass(frozen=True)
class BasisEntry:
    phi: float
    basis: BasisMatrix
    spectral: SpectralBasis

    @property
    def gram(self) -> np.ndarray:
        return self.basis.H.T @ self.basis.H


@dataclass(frozen=True)
class BasisStore:
    spec: ModelSpec
    entries: tuple

    @property
    def phis(self) -> np.ndarray:
        return np.array([e.phi for e in self.entries])

    def __len__(self):
        return len(self.entries)


def _store_phis(spec: ModelSpec, prior: PriorConfig) -> np.ndarray:
    return prior.phi_grid if spec.has_phi else np.array([0.0])


def _check_budget(n: int, m: int, n_phi: int, name: str, memory_cap: int):
    k = min(n, m)
    estimate = n_phi * 8 * (n * m + n * k + k)
    if estimate > memory_cap:
        raise MemoryBudgetError(f"basis store for {name} needs ~{estimate / 1e6:.0f} MB, "
                                f"cap is {memory_cap / 1e6:.0f} MB")


def _basis_entry(times, knots, family, phi, warp) -> BasisEntry:
    basis = build_basis(times, knots, KernelSpec(family, float(phi)), warp)
    return BasisEntry(float(phi), basis, SpectralBasis.from_basis(basis))


def precompute_bases(times, knots: KnotGrid, spec: ModelSpec, prior: PriorConfig, warp=None,
                     memory_cap: int = DEFAULT_MEMORY_CAP) -> BasisStore:
    """Basis matrices and their spectra for every ``phi`` on the prior grid.

    BM and IBM do not depend on ``phi`` and get a single entry with
    ``phi = 0``.
    """
    times = np.asarray(times, dtype=float)
    phis = _store_phis(spec, prior)
    _check_budget(times.size, knots.m, phis.size, spec.name, memory_cap)
    entries = tuple(_basis_entry(times, knots, spec.kernel_family, phi, warp) for phi in phis)
    return BasisStore(spec, entries)


class _LazyWorkspaces:
    """Likelihood workspaces built the first time the chain visits a ``phi``.

    Gives the same numbers as a precomputed store; chains that never leave
    a small part of the grid skip most of the eigendecompositions.
    """

    def __init__(self, times, knots, spec, phis, warp, resid):
        self._args = (times, knots, spec.kernel_family, warp)
        self._phis = phis
        self._resid = resid
        self._cache = {}

    def __len__(self):
        return self._phis.size

    def __getitem__(self, i):
        ws = self._cache.get(i)
        if ws is None:
            times, knots, family, warp = self._args
            entry = _basis_entry(times, knots, family, self._phis[i], warp)
            ws = self._cache[i] = LikelihoodWorkspace(entry.spectral, self._resid)
        return ws


@dataclass
class ModelFit:
    spec: ModelSpec
    draws: np.ndarray  # (K, 3): phi, sigma2_s, sigma_ratio
    loglik: np.ndarray
    logprior: np.ndarray
    acceptance: dict
    seed: object
    n_iter: int
    mu0: np.ndarray
    meta: dict = field(default_factory=dict)
    iterations: np.ndarray | None = None

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def credible_interval(self, column: int, level: float = 0.95):
        tail = (1.0 - level) / 2.0
        return tuple(np.quantile(self.draws[:, column], [tail, 1.0 - tail]))


def fold_index(i: int, size: int) -> int:
    """Reflect an out-of-range index back into ``[0, size)``.

    Folding with period ``2 * size`` keeps a symmetric offset proposal
    symmetric at the grid ends.
    """
    period = 2 * size
    i %= period
    return period - 1 - i if i >= size else i


def _retained_iterations(n_iter: int, burn: int, n_keep: int) -> np.ndarray:
    post = n_iter - burn
    n_keep = min(n_keep, post)
    thin = max(1, post // n_keep)
    return burn + thin * (np.arange(n_keep) + 1) - 1


def fit_model(track, spec: ModelSpec, prior: PriorConfig | None = None, n_iter: int = 10_000,
              seed=None, knots: KnotGrid | None = None, warp=None, n_keep: int = 1000,
              burn_frac: float = 0.2, use_likelihood: bool = True, store: BasisStore | None = None,
              mu0=None) -> ModelFit:
    """Run the chain for one model and return thinned post-burn-in draws.

    ``mu0`` defaults to the first observed position. With
    ``use_likelihood=False`` the chain samples the prior; log-likelihoods
    are still recorded.
    """
    if n_iter < 1000:
        raise ValueError("n_iter must be >= 1000")
    prior = prior or PriorConfig()
    knots = knots or KnotGrid.regular(400)
    mu0 = np.asarray(track.positions[0] if mu0 is None else mu0, dtype=float)
    resid = track.positions - mu0
    if store is None:
        phis = _store_phis(spec, prior)
        _check_budget(track.times.size, knots.m, phis.size, spec.name, DEFAULT_MEMORY_CAP)
        workspaces = _LazyWorkspaces(np.asarray(track.times, dtype=float), knots, spec, phis, warp, resid)
    else:
        phis = store.phis
        workspaces = [LikelihoodWorkspace(e.spectral, resid) for e in store.entries]
    n_phi = len(workspaces)
    has_phi = spec.has_phi

    rng = np.random.default_rng(seed)
    burn = int(burn_frac * n_iter)
    keep_at = _retained_iterations(n_iter, burn, n_keep)
    keep_mask = np.zeros(n_iter, dtype=bool)
    keep_mask[keep_at] = True

    phi_i = n_phi // 2
    log_s2 = math.log(prior.sigma2_s_prior_mean)
    log_r = 0.0
    steps = {"sigma2_s": 0.3, "sigma_ratio": 0.3}

    def ll_at(i, ls2, lr):
        return workspaces[i].loglik(math.exp(ls2), math.exp(2.0 * lr))

    cur_ll = ll_at(phi_i, log_s2, log_r)
    like_w = 1.0 if use_likelihood else 0.0

    names = ("phi", "sigma2_s", "sigma_ratio")
    batch_acc = dict.fromkeys(names, 0)
    post_acc = dict.fromkeys(names, 0)
    batch_n = 0
    offsets = np.concatenate([np.arange(-PHI_NEIGHBORS, 0), np.arange(1, PHI_NEIGHBORS + 1)])

    out = np.empty((keep_at.size, 3))
    out_ll = np.empty(keep_at.size)
    out_lp = np.empty(keep_at.size)
    row = 0

    for it in range(n_iter):
        burning = it < burn
        # phi: symmetric neighbor proposal on the discrete grid
        if has_phi and n_phi > 1:
            prop = fold_index(phi_i + int(offsets[rng.integers(offsets.size)]), n_phi)
            prop_ll = ll_at(prop, log_s2, log_r) if prop != phi_i else cur_ll
            if math.log(rng.random()) < like_w * (prop_ll - cur_ll):
                phi_i, cur_ll = prop, prop_ll
                batch_acc["phi"] += 1
                post_acc["phi"] += not burning

        # log sigma2_s random walk; Jacobian term + log sigma2_s
        prop = log_s2 + steps["sigma2_s"] * rng.standard_normal()
        prop_ll = ll_at(phi_i, prop, log_r)
        delta = (like_w * (prop_ll - cur_ll)
                 + prior.log_ig(math.exp(prop)) + prop
                 - prior.log_ig(math.exp(log_s2)) - log_s2)
        if math.log(rng.random()) < delta:
            log_s2, cur_ll = prop, prop_ll
            batch_acc["sigma2_s"] += 1
            post_acc["sigma2_s"] += not burning

        # log sigma_ratio random walk under U(0, upper); Jacobian + log sigma_ratio
        prop = log_r + steps["sigma_ratio"] * rng.standard_normal()
        u = math.log(rng.random())
        if math.exp(prop) < prior.ratio_upper:
            prop_ll = ll_at(phi_i, log_s2, prop)
            if u < like_w * (prop_ll - cur_ll) + prop - log_r:
                log_r, cur_ll = prop, prop_ll
                batch_acc["sigma_ratio"] += 1
                post_acc["sigma_ratio"] += not burning

        if burning:
            batch_n += 1
            if batch_n == ADAPT_BATCH:
                for name in ("sigma2_s", "sigma_ratio"):
                    rate = batch_acc[name] / ADAPT_BATCH
                    if rate < 0.2:
                        steps[name] *= 0.7
                    elif rate > 0.5:
                        steps[name] *= 1.3
                batch_acc = dict.fromkeys(names, 0)
                batch_n = 0

        if keep_mask[it]:
            s2, r = math.exp(log_s2), math.exp(log_r)
            out[row] = (phis[phi_i], s2, r)
            out_ll[row] = cur_ll
            out_lp[row] = prior.log_prior(has_phi, s2, r)
            row += 1

    n_post = n_iter - burn
    acceptance = {name: post_acc[name] / n_post for name in names}
    if not (has_phi and n_phi > 1):
        acceptance["phi"] = float("nan")
    applicable = [v for v in acceptance.values() if not math.isnan(v)]
    if all(v == 0 for v in applicable):
        raise ChainError(f"{spec.name}: every proposal was rejected after burn-in")

    meta = {
        "m_knots": knots.m,
        "burn_in": burn,
        "n_keep": int(keep_at.size),
        "step_sigma2_s": steps["sigma2_s"],
        "step_sigma_ratio": steps["sigma_ratio"],
        "ig_convention": "shape-scale",
        "use_likelihood": use_likelihood,
    }
    return ModelFit(spec, out, out_ll, out_lp, acceptance, seed, n_iter, mu0, meta, keep_at)


def recompute_loglik(fit: ModelFit, track, knots: KnotGrid, warp=None, rows=None) -> np.ndarray:
    """Log-likelihoods of saved draws via the Woodbury reference route."""
    rows = range(fit.n_draws) if rows is None else rows
    cache = {}
    out = []
    for k in rows:
        phi, s2, r = fit.draws[k]
        if phi not in cache:
            cache[phi] = build_basis(track.times, knots, KernelSpec(fit.spec.kernel_family, phi), warp)
        cov = IntegratedCovariance(s2, r * r, cache[phi])
        out.append(loglik_integrated(track, fit.mu0, cov))
    return np.array(out)
