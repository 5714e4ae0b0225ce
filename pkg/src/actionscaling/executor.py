"""Closed-loop execution: per step sample, fit a Gaussian proposal, select, act."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import jsonio
from .action_core import denormalize, normalize, rmse
from .policy_sim import StochasticPolicy, ToyEnv, derive_seed
from .sampling import gaussian_perturbation
from .verifier import VerifierModel, select_best_index

MODES = ("verifier", "oracle", "greedy", "random_select", "majority_mean")


@dataclass(frozen=True)
class RolloutConfig:
    n_hat: int = 5
    k_hat: int = 16
    temperature: float = 1.0
    horizon: int = 60
    mode: str = "verifier"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode != "greedy" and self.n_hat < 2:
            raise ValueError("n_hat must be >= 2 to fit a proposal")
        if self.k_hat < 1 or self.horizon < 1:
            raise ValueError("k_hat and horizon must be >= 1")
        if self.mode != "greedy" and self.temperature <= 0:
            raise ValueError("sampling modes need temperature > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RolloutResult:
    success: bool
    steps: int
    actions: list = field(default_factory=list)
    step_rmse: list = field(default_factory=list)
    proposals: list = field(default_factory=list)

    def log_lines(self, **extra) -> list[str]:
        return [
            jsonio.dumps({**extra, "t": t, "action": a, "rmse_to_expert": e})
            for t, (a, e) in enumerate(zip(self.actions, self.step_rmse))
        ]


def select_action(mode, proposals, proposal, expert, model, obs, rng_seed) -> np.ndarray:
    actions = proposals.actions
    if mode == "verifier":
        return actions[select_best_index(model, actions, obs)]
    if mode == "oracle":
        return actions[int(np.argmin(rmse(actions, expert)))]
    if mode == "random_select":
        return actions[int(np.random.default_rng(rng_seed).integers(len(actions)))]
    if mode == "majority_mean":
        return np.append(np.clip(proposal.mean, -1.0, 1.0), proposal.gripper)
    raise ValueError(f"unsupported selection mode {mode!r}")


def run_episode(
    env: ToyEnv,
    policy: StochasticPolicy,
    model: VerifierModel | None,
    config: RolloutConfig,
    seed,
    task: int = 0,
    keep_proposals: bool = False,
) -> RolloutResult:
    """One episode from a seeded start. Candidate draws at step t use seed (seed, 1, t)
    in every mode, so modes differ only through the selected actions."""
    if config.mode == "verifier" and model is None:
        raise ValueError("verifier mode needs a model")
    obs = env.reset(task, derive_seed(seed, 0))
    result = RolloutResult(success=False, steps=0)
    if model is not None and config.mode == "verifier" and model.obs_dim != len(obs.features):
        raise ValueError("model observation size does not match the environment")
    for t in range(config.horizon):
        expert = normalize(env.expert_action(), policy.stats)
        if config.mode == "greedy":
            action = policy.sample(obs, 0.0, 1, derive_seed(seed, 1, t))[0]
        else:
            _, proposal, proposals = gaussian_perturbation(
                policy, obs, config.temperature, config.n_hat, config.k_hat, derive_seed(seed, 1, t)
            )
            action = select_action(config.mode, proposals, proposal, expert, model, obs, derive_seed(seed, 2, t))
            if keep_proposals:
                result.proposals.append(proposals.actions)
        result.actions.append(action)
        result.step_rmse.append(rmse(action, expert))
        obs, success, done = env.step(denormalize(action, policy.stats))
        result.steps = t + 1
        if success:
            result.success = True
            break
        if done:
            break
    return result


def evaluate(
    env: ToyEnv,
    policy: StochasticPolicy,
    model: VerifierModel | None,
    config: RolloutConfig,
    episodes: int,
    seed,
) -> dict:
    """Success rate over seeded episodes; episode e runs task e mod n_tasks with seed (seed, e)."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    outcomes, step_errs = [], []
    for e in range(episodes):
        r = run_episode(env, policy, model, config, derive_seed(seed, e), task=e % env.config.n_tasks)
        outcomes.append(r.success)
        step_errs.extend(r.step_rmse)
    s = np.asarray(outcomes, dtype=np.float64)
    return {
        "mode": config.mode,
        "episodes": episodes,
        "success_rate": float(s.mean()),
        "stderr": float(s.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else 0.0,
        "mean_step_rmse": float(np.mean(step_errs)),
        "outcomes": [bool(x) for x in outcomes],
    }


def paired_sign_test(a_outcomes, b_outcomes) -> dict:
    """One-sided exact sign test that ``a`` succeeds more often than ``b`` on paired episodes."""
    from scipy.stats import binomtest

    a = np.asarray(a_outcomes, dtype=bool)
    b = np.asarray(b_outcomes, dtype=bool)
    a_only = int(np.sum(a & ~b))
    b_only = int(np.sum(~a & b))
    n = a_only + b_only
    p = 1.0 if n == 0 else float(binomtest(a_only, n, 0.5, alternative="greater").pvalue)
    return {"a_only": a_only, "b_only": b_only, "p_value": p}
