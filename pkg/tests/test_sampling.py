from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from actionscaling.action_core import is_valid_action
from actionscaling.policy_sim import ToyEnv, noisy_policy
from actionscaling.sampling import (
    COV_FLOOR,
    CandidateSet,
    ProposalDistribution,
    fit_proposal,
    gaussian_perturbation,
    majority_gripper,
    make_sampler,
    sample_gaussian,
    sample_policy,
    sample_random,
)


def interior_obs(dataset):
    env = ToyEnv(dataset.env)
    start = np.zeros(6)
    start[:3] = env.goals[1] + np.array([0.0, 0.04, 0.0])
    return env.reset(1, 0, start=start)


def test_random_single_action_reproducible():
    a = sample_random(1, seed=5).actions
    np.testing.assert_array_equal(a, sample_random(1, seed=5).actions)
    assert is_valid_action(a)


def test_random_moments():
    a = sample_random(10_000, seed=0).actions[:, :6]
    assert np.all(np.abs(a.mean(axis=0)) < 0.02)
    assert np.all(np.abs(a.var(axis=0) - 1 / 3) / (1 / 3) < 0.05)


def test_random_tokens_on_bin_centers_and_prefix():
    a = sample_random(64, seed=2).actions
    k = (a[:, :6] + 1.0) * 128 - 0.5
    np.testing.assert_allclose(k, np.round(k), atol=1e-9)
    assert set(np.unique(a[:, 6])) <= {0.0, 1.0}
    np.testing.assert_array_equal(sample_random(16, seed=2).actions, a[:16])


def test_noiseless_policy_samples_identical(small_demos):
    policy = noisy_policy(small_demos, 0.0, flip_prob=0.0)
    obs, _ = small_demos[4]
    a = sample_policy(policy, obs, 1.0, 50, seed=0).actions
    assert np.all(a == a[0])


def test_policy_prefix_property(small_demos, toy_policy):
    obs, _ = small_demos[9]
    four = sample_policy(toy_policy, obs, 1.0, 4, seed=3).actions
    eight = sample_policy(toy_policy, obs, 1.0, 8, seed=3).actions
    np.testing.assert_array_equal(four, eight[:4])


def test_policy_sample_mean_clt(small_demos):
    # 3-standard-error check per (seed, dim); two-sided miss rate is 0.27% per cell
    policy = noisy_policy(small_demos, 0.2)
    obs = interior_obs(small_demos)
    mode = policy.mode(obs)
    misses = 0
    for seed in range(50):
        a = sample_policy(policy, obs, 1.0, 1000, seed=seed).actions[:, :6]
        se = a.std(axis=0, ddof=1) / np.sqrt(len(a))
        misses += int(np.sum(np.abs(a.mean(axis=0) - mode[:6]) >= 3 * se))
    assert misses / (50 * 6) <= 0.01


def test_policy_sampling_rejects_zero_temperature(small_demos, toy_policy):
    obs, _ = small_demos[0]
    with pytest.raises(ValueError):
        sample_policy(toy_policy, obs, 0.0, 4, 0)


def test_fit_identical_actions_gives_floor():
    a = np.tile(np.array([0.1, -0.2, 0.3, 0.0, 0.5, -0.5, 1.0]), (4, 1))
    p = fit_proposal(a)
    np.testing.assert_allclose(p.mean, a[0, :6], atol=1e-15)
    np.testing.assert_allclose(p.covariance, COV_FLOOR * np.eye(6), atol=1e-18)
    assert p.gripper == 1


def test_fit_needs_two_candidates():
    with pytest.raises(ValueError, match="raise the initial sample count"):
        fit_proposal(np.zeros((1, 7)))


def test_majority_gripper_and_tie():
    assert majority_gripper([1, 1, 0]) == 1
    assert majority_gripper([0, 0, 1]) == 0
    assert majority_gripper([1, 0]) == 1
    assert majority_gripper([0, 0, 1, 1]) == 1


@st.composite
def action_sets(draw):
    n = draw(st.integers(2, 9))
    cont = draw(arrays(np.float64, (n, 6), elements=st.floats(-1, 1, allow_nan=False)))
    grip = draw(arrays(np.float64, n, elements=st.sampled_from([0.0, 1.0])))
    return np.column_stack([cont, grip])


@settings(max_examples=100)
@given(action_sets(), st.randoms(use_true_random=False))
def test_fit_permutation_invariant(actions, rnd):
    perm = list(range(len(actions)))
    rnd.shuffle(perm)
    p, q = fit_proposal(actions), fit_proposal(actions[perm])
    np.testing.assert_allclose(p.mean, q.mean, atol=1e-12)
    np.testing.assert_allclose(p.covariance, q.covariance, atol=1e-12)
    assert p.gripper == q.gripper
    assert np.all(np.linalg.eigvalsh(p.covariance) >= COV_FLOOR * (1 - 1e-6))


def test_degenerate_proposal_stays_near_mean():
    p = ProposalDistribution(np.full(6, 0.2), COV_FLOOR * np.eye(6), 0)
    a = sample_gaussian(p, 500, seed=1).actions
    assert np.all(np.abs(a[:, :6] - 0.2) < 6 * np.sqrt(COV_FLOOR))
    assert np.all(a[:, 6] == 0)


def test_gaussian_sample_covariance():
    var = np.array([0.01, 0.02, 0.005, 0.03, 0.015, 0.008])
    p = ProposalDistribution(np.zeros(6), np.diag(var), 1)
    a = sample_gaussian(p, 10_000, seed=7).actions
    emp = np.cov(a[:, :6], rowvar=False)
    np.testing.assert_array_less(np.abs(np.diag(emp) - var) / var, 0.10)
    off = emp - np.diag(np.diag(emp))
    # off-diagonal entries are zero in the proposal; allow 10% of the geometric scale
    scale = np.sqrt(np.outer(var, var))
    assert np.all(np.abs(off) < 0.10 * scale)
    assert np.all(a[:, 6] == 1)


def test_gaussian_samples_are_clamped():
    p = ProposalDistribution(np.full(6, 0.95), 0.25 * np.eye(6), 1)
    a = sample_gaussian(p, 200, seed=0).actions
    assert np.all(np.abs(a[:, :6]) <= 1.0)


def test_non_pd_covariance_raises():
    cov = np.zeros((6, 6))
    with pytest.raises(RuntimeError):
        sample_gaussian(ProposalDistribution(np.zeros(6), cov, 1), 3, 0)


def test_asymmetric_covariance_rejected():
    cov = np.eye(6)
    cov[0, 1] = 0.5
    with pytest.raises(ValueError):
        ProposalDistribution(np.zeros(6), cov, 1)


def test_perturbation_uses_fitted_gripper(small_demos, toy_policy):
    obs, _ = small_demos[2]
    initial, proposal, proposals = gaussian_perturbation(toy_policy, obs, 1.0, 5, 32, seed=[1, 2])
    assert len(initial) == 5 and len(proposals) == 32
    assert proposals.source == "gaussian"
    assert np.all(proposals.actions[:, 6] == proposal.gripper)
    assert proposal.gripper == majority_gripper(initial.actions[:, 6])


def test_candidate_set_validation():
    with pytest.raises(ValueError):
        CandidateSet(np.zeros((0, 7)), "policy")
    with pytest.raises(ValueError):
        CandidateSet(np.full((1, 7), 2.0), "policy")
    with pytest.raises(ValueError):
        CandidateSet(np.zeros((1, 7)), "other")


def test_make_sampler(toy_policy, small_demos):
    obs, _ = small_demos[0]
    for name in ("random", "policy", "gaussian"):
        assert make_sampler(name, toy_policy)(obs, 3, 0).source == name
    with pytest.raises(ValueError):
        make_sampler("beam", toy_policy)
    with pytest.raises(ValueError):
        make_sampler("policy", None)
