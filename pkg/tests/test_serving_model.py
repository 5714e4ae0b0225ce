from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from actionscaling.scaling_law import ScalingCurve, k_grid
from actionscaling.serving_model import (
    BATCH_GRID,
    PROPOSAL_COST,
    CostProfile,
    default_profile,
    error_vs_budget,
    latency,
    policy_latency,
    verifier_latency,
)

SERVED = default_profile()
NAIVE = default_profile("naive")


def flat_curve(k_max=128, value=0.3):
    ks = k_grid(k_max)
    return ScalingCurve(ks, np.full(len(ks), value), np.zeros(len(ks)), "policy")


def decreasing_curve(k_max=128):
    ks = k_grid(k_max)
    return ScalingCurve(ks, 0.4 * ks.astype(float) ** -0.2, np.zeros(len(ks)), "policy")


def test_table_values():
    assert policy_latency(SERVED, 32) == 1.3
    assert verifier_latency(SERVED, 16) == 0.35
    assert policy_latency(NAIVE, 16) == 2.4
    assert policy_latency(NAIVE, 128) == 20.0
    with pytest.raises(ValueError):
        default_profile("other")


def test_interpolation_exact_on_grid():
    for i, b in enumerate(BATCH_GRID):
        assert policy_latency(SERVED, b) == SERVED.policy[i]
        assert verifier_latency(SERVED, b) == SERVED.verifier[i]


def test_interpolation_linear_in_log_batch():
    # 5 sits log2(5) - 2 of the way from 4 to 8
    t = math.log2(5) - 2
    assert policy_latency(SERVED, 5) == pytest.approx(0.28 + t * (0.42 - 0.28), abs=1e-15)


def test_out_of_domain_rejected():
    for count in (0.5, 129, 256):
        with pytest.raises(ValueError, match="outside"):
            policy_latency(SERVED, count)
    with pytest.raises(ValueError):
        latency(SERVED, "beam", 5, 16)


def test_deployment_point_near_650ms():
    t = latency(SERVED, "gaussian", 5, 16)
    expected = 0.28 + (math.log2(5) - 2) * 0.14 + 16 * 1e-5 + 0.35
    assert t == pytest.approx(expected, abs=1e-15)
    assert t == pytest.approx(0.67523, abs=1e-6)
    assert 0.6 <= t <= 0.8


def test_single_candidate_strategies_differ_only_by_proposal_cost():
    g = latency(SERVED, "gaussian", 1, 1)
    p = latency(SERVED, "policy_sampling", 1, 1)
    assert p == pytest.approx(0.13 + 0.092, abs=1e-15)
    assert g - p == pytest.approx(PROPOSAL_COST, abs=1e-15)
    free = CostProfile(SERVED.policy, SERVED.verifier, proposal_cost=0.0)
    assert latency(free, "gaussian", 1, 1) == latency(free, "policy_sampling", 1, 1)


def test_gaussian_increment_is_verifier_plus_proposals():
    d = latency(SERVED, "gaussian", 5, 64) - latency(SERVED, "gaussian", 5, 32)
    assert d == pytest.approx(1.3 - 0.65 + 32 * PROPOSAL_COST, abs=1e-12)


@given(st.integers(1, 9), st.integers(2, 128))
def test_gaussian_cheaper_when_more_proposals_than_samples(n_hat, k_hat):
    g = latency(SERVED, "gaussian", n_hat, k_hat)
    p = latency(SERVED, "policy_sampling", n_hat, k_hat)
    if k_hat > n_hat:
        assert g < p
    else:
        # with k_hat <= n_hat the Gaussian path draws at least as many policy samples
        assert g >= p


def test_profile_validation_and_round_trip(tmp_path):
    SERVED.save(tmp_path / "p.json")
    assert CostProfile.load(tmp_path / "p.json") == SERVED
    with pytest.raises(ValueError, match="non-decreasing"):
        CostProfile((0.2, 0.1), (0.1, 0.2), batch_sizes=(1, 2))
    with pytest.raises(ValueError):
        CostProfile((0.1, 0.2), (0.1, 0.2), batch_sizes=(1, 3))
    with pytest.raises(ValueError):
        CostProfile((0.1, 0.2, 0.3), (0.1, 0.2), batch_sizes=(1, 2))


def test_budget_curve_flat_error():
    curve = error_vs_budget(SERVED, flat_curve(), "gaussian")
    assert np.all(curve.error == 0.3)
    assert np.all(np.diff(curve.latency) > 0)


def test_budget_latency_monotone_in_k():
    for strategy in ("gaussian", "policy_sampling"):
        for profile in (SERVED, NAIVE):
            assert np.all(np.diff(error_vs_budget(profile, decreasing_curve(), strategy).latency) > 0)


def test_gaussian_dominates_beyond_initial_samples():
    curve = decreasing_curve()
    g = error_vs_budget(SERVED, curve, "gaussian", n_hat=5)
    p = error_vs_budget(SERVED, curve, "policy_sampling")
    budgets = np.union1d(g.latency, p.latency)
    budgets = budgets[budgets >= latency(SERVED, "gaussian", 5, 8)]
    for b in budgets:
        assert g.best_error_within(b) <= p.best_error_within(b)
    assert g.best_error_within(0.0) == math.inf


def test_budget_rejects_k_outside_profile():
    with pytest.raises(ValueError, match="k_max <= 128"):
        error_vs_budget(SERVED, flat_curve(256), "gaussian")


def test_budget_csv(tmp_path):
    ks = np.array([1, 2])
    curve = ScalingCurve(ks, np.array([0.5, 0.25]), np.zeros(2), "policy")
    error_vs_budget(SERVED, curve, "policy_sampling").to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "k,latency_s,mean_rmse,strategy"
    assert lines[1].split(",")[0] == "1" and lines[1].endswith("policy_sampling")
    assert float(lines[2].split(",")[1]) == pytest.approx(0.21 + 0.099)
