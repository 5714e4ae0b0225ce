"""Candidate generation: uniform token sampling, policy sampling, Gaussian perturbation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .action_core import ACTION_DIM, CONT_DIM, GRIPPER, N_BINS, detokenize, is_valid_action
from .policy_sim import Observation, StochasticPolicy, derive_seed

COV_FLOOR = 1e-6
SOURCES = ("random", "policy", "gaussian")


@dataclass(frozen=True, eq=False)
class CandidateSet:
    actions: np.ndarray
    source: str

    def __post_init__(self):
        a = np.array(self.actions, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != ACTION_DIM or len(a) == 0:
            raise ValueError(f"candidate set must be a nonempty (n, 7) array, got shape {a.shape}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if not is_valid_action(a):
            raise ValueError("candidate set holds invalid actions")
        a.setflags(write=False)
        object.__setattr__(self, "actions", a)

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True, eq=False)
class ProposalDistribution:
    mean: np.ndarray
    covariance: np.ndarray
    gripper: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.shape != (CONT_DIM,) or cov.shape != (CONT_DIM, CONT_DIM):
            raise ValueError("proposal needs a 6-vector mean and 6x6 covariance")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        if self.gripper not in (0, 1):
            raise ValueError("gripper must be 0 or 1")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "gripper", int(self.gripper))


def sample_random(count: int, seed) -> CandidateSet:
    """Uniform tokens per dim (gripper from {0, 255}), detokenized to bin centers."""
    if count < 1:
        raise ValueError("count must be >= 1")
    tokens = np.random.default_rng(seed).integers(0, N_BINS, size=(count, ACTION_DIM))
    tokens[:, GRIPPER] = np.where(tokens[:, GRIPPER] >= N_BINS // 2, N_BINS - 1, 0)
    return CandidateSet(detokenize(tokens), "random")


def sample_policy(policy: StochasticPolicy, obs: Observation, temperature: float, count: int, seed) -> CandidateSet:
    if temperature <= 0:
        raise ValueError("policy sampling needs temperature > 0")
    if count < 1:
        raise ValueError("count must be >= 1")
    return CandidateSet(policy.sample(obs, temperature, count, seed), "policy")


def majority_gripper(grippers) -> int:
    """Mode of binary gripper values; ties go to open (1)."""
    g = np.asarray(grippers)
    closed = int(np.count_nonzero(g < 0.5))
    return 0 if closed > len(g) - closed else 1


def fit_proposal(candidates: CandidateSet | np.ndarray, eps: float = COV_FLOOR) -> ProposalDistribution:
    """Sample mean/covariance of the continuous dims plus ``eps`` on the diagonal."""
    actions = candidates.actions if isinstance(candidates, CandidateSet) else np.asarray(candidates)
    if len(actions) < 2:
        raise ValueError(
            f"need at least 2 candidates to fit a proposal, got {len(actions)}; raise the initial sample count"
        )
    cont = actions[:, :CONT_DIM]
    mean = cont.mean(axis=0)
    centered = cont - mean
    cov = centered.T @ centered / (len(cont) - 1)
    cov = 0.5 * (cov + cov.T) + eps * np.eye(CONT_DIM)
    return ProposalDistribution(mean, cov, majority_gripper(actions[:, GRIPPER]))


def sample_gaussian(proposal: ProposalDistribution, count: int, seed) -> CandidateSet:
    if count < 1:
        raise ValueError("count must be >= 1")
    try:
        chol = np.linalg.cholesky(proposal.covariance)
    except np.linalg.LinAlgError as e:
        raise RuntimeError("proposal covariance is not positive definite") from e
    z = np.random.default_rng(seed).standard_normal((count, CONT_DIM))
    out = np.empty((count, ACTION_DIM))
    out[:, :CONT_DIM] = np.clip(proposal.mean + z @ chol.T, -1.0, 1.0)
    out[:, GRIPPER] = proposal.gripper
    return CandidateSet(out, "gaussian")


def gaussian_perturbation(
    policy: StochasticPolicy, obs: Observation, temperature: float, n_hat: int, count: int, seed
) -> tuple[CandidateSet, ProposalDistribution, CandidateSet]:
    """Draw ``n_hat`` policy samples, fit the proposal, draw ``count`` proposals.

    Returns (initial samples, proposal, proposals).
    """
    initial = sample_policy(policy, obs, temperature, n_hat, derive_seed(seed, 0))
    proposal = fit_proposal(initial)
    return initial, proposal, sample_gaussian(proposal, count, derive_seed(seed, 1))


# A sampler maps (observation, count, seed) to candidates; the scaling sweep
# relies on the first m of a larger draw matching a draw of m.
Sampler = Callable[[Observation, int, object], CandidateSet]


def random_sampler() -> Sampler:
    return lambda obs, count, seed: sample_random(count, seed)


def policy_sampler(policy: StochasticPolicy, temperature: float = 1.0) -> Sampler:
    return lambda obs, count, seed: sample_policy(policy, obs, temperature, count, seed)


def gaussian_sampler(policy: StochasticPolicy, temperature: float = 1.0, n_hat: int = 5) -> Sampler:
    return lambda obs, count, seed: gaussian_perturbation(policy, obs, temperature, n_hat, count, seed)[2]


def make_sampler(name: str, policy: StochasticPolicy | None, temperature: float = 1.0, n_hat: int = 5) -> Sampler:
    if name == "random":
        return random_sampler()
    if policy is None:
        raise ValueError(f"sampler {name!r} needs a policy")
    if name == "policy":
        return policy_sampler(policy, temperature)
    if name == "gaussian":
        return gaussian_sampler(policy, temperature, n_hat)
    raise ValueError(f"unknown sampler {name!r}; expected one of {SOURCES}")
