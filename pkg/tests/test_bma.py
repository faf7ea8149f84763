import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fmm.bma import (
    BmaError,
    BmaResult,
    accumulate_kernel_probs,
    averaged_warp_derivative,
    model_weights,
    rjmcmc_average,
)
from fmm.kernels import FAMILIES
from fmm.mcmc import ModelFit, ModelSpec, PriorConfig
from fmm.warp import WarpField, default_grid, identity_warp


def fake_fit(family="G", warp_id="identity", loglik=None, K=100, seed=0):
    rng = np.random.default_rng(seed)
    loglik = rng.normal(size=K) if loglik is None else np.asarray(loglik, dtype=float)
    K = loglik.size
    draws = np.column_stack([np.full(K, 0.01), np.full(K, 0.001), np.ones(K)])
    return ModelFit(ModelSpec(family, warp_id), draws, loglik, np.zeros(K), {}, seed, 2000, np.zeros(2))


def test_duplicated_model_splits_evenly():
    fit = fake_fit(K=10_000, seed=1)
    res = rjmcmc_average([fit, fit], seed=3)
    np.testing.assert_allclose(res.model_probs, [0.5, 0.5], atol=0.02)


def test_dominant_model():
    a = fake_fit("G", K=1000, seed=2)
    b = fake_fit("TU", loglik=a.loglik - 100.0)
    res = rjmcmc_average([a, b], seed=0)
    assert res.model_probs[0] > 0.999


def test_single_model_gets_everything():
    res = rjmcmc_average([fake_fit("TD")], seed=0)
    assert res.model_probs.tolist() == [1.0]
    assert res.kernel_probs == {"TD": 1.0}


def test_probabilities_normalized_and_seeded():
    fits = [fake_fit(fam, seed=i) for i, fam in enumerate(FAMILIES)]
    a = rjmcmc_average(fits, seed=9)
    b = rjmcmc_average(fits, seed=9)
    np.testing.assert_array_equal(a.model_chain, b.model_chain)
    assert a.model_probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert sum(a.kernel_probs.values()) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(a.weights.sum(axis=1), 1.0, atol=1e-12)


def test_model_prior_shifts_mass():
    fit = fake_fit(K=5000)
    res = rjmcmc_average([fit, fit], PriorConfig(model_prior=[0.9, 0.1]), seed=1)
    assert res.model_probs[0] == pytest.approx(0.9, abs=0.02)


def test_mismatched_draw_counts_rejected():
    with pytest.raises(BmaError, match="unequal"):
        rjmcmc_average([fake_fit(K=10), fake_fit(K=11)])


def test_all_minus_infinity_rejected():
    with pytest.raises(BmaError, match="-inf"):
        rjmcmc_average([fake_fit(loglik=[-np.inf] * 5), fake_fit(loglik=[-np.inf] * 5)])


def test_rj_iterations_bounded_by_draws():
    with pytest.raises(BmaError):
        model_weights([fake_fit(K=10)], n_rj_iter=11)
    assert model_weights([fake_fit(K=10)], n_rj_iter=4).shape == (4, 1)


def test_chain_matches_categorical_probabilities():
    fits = [fake_fit(fam, K=20_000, seed=s) for s, fam in enumerate(("G", "TU", "TD"))]
    res = rjmcmc_average(fits, seed=4)
    expected = res.weights.sum(axis=0)
    observed = np.bincount(res.model_chain, minlength=3)
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_chain_frequencies_converge():
    fits = [fake_fit(fam, K=40_000, seed=s) for s, fam in enumerate(("G", "TU"))]
    res = rjmcmc_average(fits, seed=5)
    np.testing.assert_allclose(res.model_probs, res.weights.mean(axis=0), atol=0.01)


def _uniform_result(J):
    specs = [ModelSpec(fam, f"w{j}") for fam in FAMILIES for j in range(J)]
    probs = np.full(len(specs), 1.0 / len(specs))
    return BmaResult(specs, probs, {}, np.zeros(1, int), 1)


@settings(max_examples=25, deadline=None)
@given(J=st.integers(1, 40))
def test_uniform_probs_give_equal_families(J):
    for fam, p in accumulate_kernel_probs(_uniform_result(J)).items():
        assert p == pytest.approx(0.2, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000))
def test_kernel_probs_invariant_to_warp_order(seed):
    rng = np.random.default_rng(seed)
    res = _uniform_result(4)
    res.model_probs = rng.dirichlet(np.ones(len(res.specs)))
    perm = rng.permutation(len(res.specs))
    shuffled = BmaResult([res.specs[i] for i in perm], res.model_probs[perm], {}, res.model_chain, 1)
    a, b = accumulate_kernel_probs(res), accumulate_kernel_probs(shuffled)
    assert a.keys() == b.keys()
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-12)


def test_prob_lookup_and_warp_probs():
    res = _uniform_result(2)
    assert res.prob_of("G", "w1") == pytest.approx(0.1)
    assert res.warp_probs() == pytest.approx({"w0": 0.5, "w1": 0.5})
    with pytest.raises(KeyError):
        res.prob_of("G", "nope")


def test_averaged_warp_derivative():
    g = default_grid()
    steep = WarpField("steep", g, 3 * g)
    specs = [ModelSpec("G", "identity"), ModelSpec("G", "steep")]
    res = BmaResult(specs, np.array([0.25, 0.75]), {}, np.zeros(1, int), 1)
    grid, avg = averaged_warp_derivative(res, {"identity": identity_warp(), "steep": steep})
    np.testing.assert_array_equal(grid, g)
    np.testing.assert_allclose(avg, 0.25 + 0.75 * 3)
    other = WarpField("other", np.linspace(0, 1, 60), np.linspace(0, 1, 60))
    res.specs[1] = ModelSpec("G", "other")
    with pytest.raises(BmaError):
        averaged_warp_derivative(res, {"identity": identity_warp(), "other": other})
