"""Two-stage reversible-jump model averaging over independently fitted models.

At RJ iteration ``k`` every model contributes its ``k``-th retained draw;
model weights are ``loglik + logprior + log p`` normalized across models and
the model indicator is drawn from the resulting categorical distribution.
Posterior model probabilities are indicator frequencies.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .kernels import FAMILIES


class BmaError(RuntimeError):
    pass


@dataclass
class BmaResult:
    specs: list
    model_probs: np.ndarray
    kernel_probs: dict
    model_chain: np.ndarray
    n_rj_iter: int
    weights: np.ndarray | None = field(default=None, repr=False)

    def prob_of(self, family: str, warp_id: str) -> float:
        for spec, p in zip(self.specs, self.model_probs):
            if spec.kernel_family == family and spec.warp_id == warp_id:
                return float(p)
        raise KeyError((family, warp_id))

    def warp_probs(self) -> dict:
        out = {}
        for spec, p in zip(self.specs, self.model_probs):
            out[spec.warp_id] = out.get(spec.warp_id, 0.0) + float(p)
        return out


def model_weights(fits, prior_probs=None, n_rj_iter: int | None = None) -> np.ndarray:
    """Per-iteration categorical model probabilities, shape ``(n_rj_iter, N)``."""
    if not fits:
        raise BmaError("no fitted models")
    counts = {f.n_draws for f in fits}
    if len(counts) != 1:
        raise BmaError(f"fits have unequal retained-draw counts: {sorted(counts)}")
    K = counts.pop()
    n_rj_iter = K if n_rj_iter is None else n_rj_iter
    if not 1 <= n_rj_iter <= K:
        raise BmaError(f"n_rj_iter must be in [1, {K}]")
    N = len(fits)
    p = np.full(N, 1.0 / N) if prior_probs is None else np.asarray(prior_probs, dtype=float)
    if p.shape != (N,):
        raise BmaError("model prior has the wrong length")
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    logw = np.column_stack([f.loglik[:n_rj_iter] + f.logprior[:n_rj_iter] for f in fits]) + logp
    norm = logsumexp(logw, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        bad = int(np.flatnonzero(~np.isfinite(norm[:, 0]))[0])
        raise BmaError(f"all model weights are -inf or invalid at RJ iteration {bad}")
    return np.exp(logw - norm)


def rjmcmc_average(fits, prior=None, n_rj_iter: int | None = None, seed=None,
                   keep_weights: bool = True) -> BmaResult:
    """Sample the model indicator chain and return model probabilities."""
    prior_probs = getattr(prior, "model_prior", None) if prior is not None else None
    weights = model_weights(fits, prior_probs, n_rj_iter)
    n_rj_iter = weights.shape[0]
    rng = np.random.default_rng(seed)
    u = rng.random(n_rj_iter)
    cum = np.cumsum(weights, axis=1)
    chain = np.minimum((cum < (u * cum[:, -1])[:, None]).sum(axis=1), len(fits) - 1)

    model_probs = np.bincount(chain, minlength=len(fits)) / n_rj_iter
    specs = [f.spec for f in fits]
    result = BmaResult(specs, model_probs, {}, chain, n_rj_iter, weights if keep_weights else None)
    result.kernel_probs = accumulate_kernel_probs(result)
    return result


def accumulate_kernel_probs(result: BmaResult) -> dict:
    """Sum model probabilities over warps within each kernel family."""
    present = {s.kernel_family for s in result.specs}
    totals = {fam: 0.0 for fam in FAMILIES if fam in present}
    for spec, p in zip(result.specs, result.model_probs):
        totals[spec.kernel_family] += float(p)
    return totals


def averaged_warp_derivative(result: BmaResult, warps) -> tuple[np.ndarray, np.ndarray]:
    """Model-averaged ``dw/dt`` on the common warp grid.

    ``warps`` maps warp id to :class:`fmm.warp.WarpField`.
    """
    probs = result.warp_probs()
    grid = None
    avg = None
    for warp_id, p in probs.items():
        w = warps[warp_id]
        if grid is None:
            grid = w.grid_times
            avg = np.zeros_like(grid)
        elif not np.array_equal(grid, w.grid_times):
            raise BmaError("warps do not share a grid")
        avg += p * w.derivative
    return grid, avg
