import math

import numpy as np
import pytest
from scipy import stats

import fmm.mcmc as mcmc
from fmm.ingest import Track
from fmm.kernels import KernelSpec, KnotGrid
from fmm.mcmc import (
    ChainError,
    MemoryBudgetError,
    ModelSpec,
    PriorConfig,
    fit_model,
    fold_index,
    precompute_bases,
    recompute_loglik,
)
from fmm.sim import SimConfig, simulate


@pytest.fixture(scope="module")
def track():
    return simulate(SimConfig(n_obs=80, m_knots=100, seed=11)).track


def test_prior_defaults():
    p = PriorConfig()
    assert p.phi_grid.size == 100 and p.phi_grid[0] == 0.001 and p.phi_grid[-1] == 0.1
    assert p.sigma2_s_prior_mean == pytest.approx(0.01 / 11)
    assert p.log_ig(0.001) == pytest.approx(stats.invgamma(12, scale=0.01).logpdf(0.001))
    assert p.log_prior(True, 0.001, 25.0) == -math.inf
    assert p.log_prior(True, 0.001, 1.0) == pytest.approx(p.log_prior(False, 0.001, 1.0) - math.log(100))


def test_prior_validation():
    with pytest.raises(ValueError):
        PriorConfig(phi_grid=[0.1, 0.05])
    with pytest.raises(ValueError):
        PriorConfig(ig_shape=1.0)
    with pytest.raises(ValueError):
        PriorConfig(model_prior=[0.5, 0.4])


def test_fold_index_reflects():
    assert [fold_index(i, 4) for i in range(-3, 9)] == [2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0, 0]


def test_precompute_store_sizes_and_determinism(track):
    knots = KnotGrid.regular(50)
    g = precompute_bases(track.times, knots, ModelSpec("G"), PriorConfig())
    assert len(g) == 100 and g.entries[0].basis.H.shape == (track.n, 50)
    bm = precompute_bases(track.times, knots, ModelSpec("BM"), PriorConfig())
    assert len(bm) == 1 and bm.phis[0] == 0.0
    again = precompute_bases(track.times, knots, ModelSpec("G"), PriorConfig())
    for a, b in zip(g.entries, again.entries):
        assert a.basis.H.tobytes() == b.basis.H.tobytes()
        assert a.spectral.U.tobytes() == b.spectral.U.tobytes()
    np.testing.assert_allclose(g.entries[3].gram, g.entries[3].basis.H.T @ g.entries[3].basis.H)


def test_memory_cap_is_enforced(track):
    with pytest.raises(MemoryBudgetError):
        precompute_bases(track.times, KnotGrid.regular(400), ModelSpec("G"), PriorConfig(), memory_cap=10**6)


def test_fit_contract_and_determinism(track):
    knots = KnotGrid.regular(100)
    a = fit_model(track, ModelSpec("TU"), n_iter=2000, seed=5, knots=knots)
    b = fit_model(track, ModelSpec("TU"), n_iter=2000, seed=5, knots=knots)
    assert a.n_draws == 1000
    np.testing.assert_array_equal(a.draws, b.draws)
    np.testing.assert_array_equal(a.loglik, b.loglik)
    assert np.all(np.isin(a.draws[:, 0], PriorConfig().phi_grid))
    assert np.all((a.draws[:, 2] > 0) & (a.draws[:, 2] < 20))
    assert np.all(a.draws[:, 1] > 0)
    np.testing.assert_array_equal(a.mu0, track.positions[0])
    for name in ("phi", "sigma2_s", "sigma_ratio"):
        assert 0 < a.acceptance[name] < 1
    assert a.iterations[0] >= 400 and np.all(np.diff(a.iterations) > 0)


def test_stored_loglik_matches_reference_route(track):
    knots = KnotGrid.regular(100)
    fit = fit_model(track, ModelSpec("G"), n_iter=1500, seed=2, knots=knots)
    rows = np.linspace(0, fit.n_draws - 1, 25).astype(int)
    np.testing.assert_allclose(recompute_loglik(fit, track, knots, rows=rows), fit.loglik[rows], rtol=1e-8)
    lp = [PriorConfig().log_prior(True, s2, r) for _, s2, r in fit.draws[rows]]
    np.testing.assert_allclose(lp, fit.logprior[rows], rtol=1e-12)


def test_bm_fit_has_constant_phi(track):
    fit = fit_model(track, ModelSpec("BM"), n_iter=1000, seed=1, knots=KnotGrid.regular(60))
    assert np.all(fit.draws[:, 0] == 0.0)
    assert math.isnan(fit.acceptance["phi"])


def test_short_chain_rejected(track):
    with pytest.raises(ValueError):
        fit_model(track, ModelSpec("G"), n_iter=999)


def test_all_rejected_chain_is_reported(track, monkeypatch):
    class Stuck(mcmc.LikelihoodWorkspace):
        calls = 0

        def loglik(self, sigma2_s, sigma2_ratio):
            Stuck.calls += 1
            return 0.0 if Stuck.calls == 1 else -math.inf

    monkeypatch.setattr(mcmc, "LikelihoodWorkspace", Stuck)
    with pytest.raises(ChainError):
        fit_model(track, ModelSpec("BM"), n_iter=1000, seed=0, knots=KnotGrid.regular(20))


def test_prior_only_chain_recovers_priors(track):
    prior = PriorConfig()
    fit = fit_model(track, ModelSpec("G"), prior, n_iter=50_000, seed=3, knots=KnotGrid.regular(20),
                    n_keep=10_000, use_likelihood=False)
    assert fit.n_draws == 10_000
    ks_s2 = stats.kstest(fit.draws[:, 1], stats.invgamma(12, scale=0.01).cdf).statistic
    ks_r = stats.kstest(fit.draws[:, 2], stats.uniform(0, 20).cdf).statistic
    grid = prior.phi_grid
    ecdf = np.searchsorted(np.sort(fit.draws[:, 0]), grid, side="right") / fit.n_draws
    ks_phi = np.max(np.abs(ecdf - np.arange(1, grid.size + 1) / grid.size))
    assert ks_s2 < 0.05 and ks_r < 0.05 and ks_phi < 0.05, (ks_s2, ks_r, ks_phi)


def test_phi_chain_balances_on_two_point_grid(track):
    prior = PriorConfig(phi_grid=[0.01, 0.02])
    fit = fit_model(track, ModelSpec("G"), prior, n_iter=125_000, seed=8, knots=KnotGrid.regular(10),
                    n_keep=100_000, use_likelihood=False)
    assert np.mean(fit.draws[:, 0] == 0.01) == pytest.approx(0.5, abs=0.02)


@pytest.mark.slow
def test_more_data_narrows_phi_posterior():
    # a range well above the sampling interval, so the posterior is wider than the phi grid step
    narrower = 0
    for seed in range(4):
        iqr = []
        for n in (50, 100):
            sim = simulate(SimConfig(n_obs=n, kernel=KernelSpec("G", 0.05), sigma2_s=0.01, seed=100 + seed))
            fit = fit_model(sim.track, ModelSpec("G"), n_iter=4000, seed=seed)
            q1, q3 = np.quantile(fit.draws[:, 0], [0.25, 0.75])
            iqr.append(q3 - q1)
        narrower += iqr[1] < iqr[0]
    assert narrower >= 3
