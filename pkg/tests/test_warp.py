import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmm.warp import (
    PARAM_LEVELS,
    CandidateSetError,
    WarpField,
    WarpParams,
    build_candidate_set,
    default_grid,
    identity_warp,
    is_non_folding,
    sample_warp,
    warp_derivative,
)


def test_params_must_be_positive():
    with pytest.raises(ValueError):
        WarpParams(0.0, 0.1)
    with pytest.raises(ValueError):
        WarpParams(0.1, np.inf)


def test_tiny_sigma_gives_near_identity():
    for seed in range(5):
        w = sample_warp(WarpParams(1e-8, 0.3), seed=seed)
        assert w is not None
        assert np.max(np.abs(w.values - w.grid_times)) < 1e-3


def test_rough_warps_are_mostly_rejected():
    rejected = sum(sample_warp(WarpParams(1.0, 0.001), seed=s) is None for s in range(200))
    assert rejected > 100


def test_sampling_is_seeded():
    a = sample_warp(WarpParams(0.05, 0.5), seed=12)
    b = sample_warp(WarpParams(0.05, 0.5), seed=12)
    np.testing.assert_array_equal(a.values, b.values)


def test_short_grid_rejected():
    with pytest.raises(ValueError):
        sample_warp(WarpParams(0.1, 0.1), grid_times=np.linspace(0, 1, 20))


def test_identity_derivative_is_one():
    np.testing.assert_allclose(warp_derivative(identity_warp()), 1.0, atol=1e-10)


def test_linear_warp_derivative():
    g = default_grid()
    w = WarpField("lin", g, 2 * g - 0.3)
    np.testing.assert_allclose(warp_derivative(w), 2.0, atol=1e-8)
    np.testing.assert_allclose(w.derivative, 2.0, atol=1e-8)


def test_evaluate_is_exact_on_grid_and_bounded():
    w = sample_warp(WarpParams(0.05, 0.5), seed=3)
    np.testing.assert_array_equal(w.evaluate(w.grid_times), w.values)
    with pytest.raises(ValueError):
        w.evaluate([1.5])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.lists(st.floats(0, 1), min_size=2, max_size=40, unique=True))
def test_interpolation_preserves_order(seed, t):
    w = sample_warp(WarpParams(0.1, 0.6), seed=seed)
    if w is None:
        return
    t = np.sort(np.array(t))
    if np.min(np.diff(t)) < 1e-6:
        return
    assert np.all(np.diff(w.evaluate(t)) > 0)


def test_candidate_set_small():
    warps = build_candidate_set(per_combo=2, seed=4)
    assert warps[0].is_identity
    assert len(warps) <= 201
    ids = [w.id for w in warps]
    assert len(set(ids)) == len(ids)
    for w in warps:
        assert is_non_folding(w.values)
        assert np.all(warp_derivative(w) > 0)
    levels = PARAM_LEVELS
    for w in warps[1:]:
        assert levels[0] <= w.params.sigma_w <= levels[-1]
        assert levels[0] <= w.params.phi_w <= levels[-1]


def test_candidate_set_is_seeded_and_worker_independent():
    a = build_candidate_set(per_combo=1, seed=8)
    b = build_candidate_set(per_combo=1, seed=8, workers=2)
    assert [w.id for w in a] == [w.id for w in b]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)


def test_lhs_stratifies_within_cell():
    warps = build_candidate_set(param_levels=[0.001, 0.112], per_combo=10, seed=2,
                                grid_times=np.linspace(0, 1, 101))
    from_combo = [w for w in warps[1:] if w.id.startswith("c001")]  # small sigma_w, phi_w at the top level
    assert len(from_combo) == 10
    half = (0.112 - 0.001) / 2
    phi = np.array([w.params.phi_w for w in from_combo])
    # one draw per stratum of the cell [0.112 - half, 0.112]
    strata = np.floor((phi - (0.112 - half)) / (half / 10)).astype(int)
    assert sorted(strata) == list(range(10))


def test_exhaustion_is_logged(caplog):
    with caplog.at_level(logging.INFO, logger="fmm.warp"):
        warps = build_candidate_set(per_combo=1, max_attempts=1, seed=0)
    assert len(warps) - 1 < 100
    assert any("accepted after" in r.message for r in caplog.records)
    assert any("exhausted" in r.message for r in caplog.records)


def test_all_exhausted_is_an_error():
    # derivative scale sigma_w / phi_w near 1: nearly every draw folds somewhere
    with pytest.raises(CandidateSetError):
        build_candidate_set(param_levels=[0.2, 0.21], per_combo=1, max_attempts=1, seed=0)
