from __future__ import annotations

import numpy as np
import pytest

from actionscaling.policy_sim import EnvConfig, ToyEnv, generate_demos, noisy_policy, toy_bias
from actionscaling.preference import generate_preference_dataset
from actionscaling.verifier import TrainConfig, train

# One line per acceptance criterion, printed at the end of the session.
ACCEPTANCE_LINES: list[str] = []

TOY_NOISE = 0.25


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_demos():
    return generate_demos(ToyEnv(EnvConfig()), 60, seed=0)


@pytest.fixture(scope="session")
def toy_policy(small_demos):
    return noisy_policy(small_demos, TOY_NOISE, toy_bias())


@pytest.fixture(scope="session")
def train_demos():
    return generate_demos(ToyEnv(EnvConfig()), 1500, seed=0)


@pytest.fixture(scope="session")
def heldout_demos():
    return generate_demos(ToyEnv(EnvConfig()), 300, seed=99)


@pytest.fixture(scope="session")
def toy_prefs(tmp_path_factory, train_demos, heldout_demos):
    """Training and held-out preference files for the sigma=0.25 toy policy."""
    d = tmp_path_factory.mktemp("toy_prefs")
    policy = noisy_policy(train_demos, TOY_NOISE, toy_bias())
    train_path, eval_path = d / "train.jsonl", d / "eval.jsonl"
    generate_preference_dataset(train_demos.sample_buffer(5000, 1), policy, 32, 6, 1.0, 0, train_path)
    generate_preference_dataset(heldout_demos.sample_buffer(500, 2), policy, 32, 6, 1.0, 5, eval_path)
    return policy, train_path, eval_path


@pytest.fixture(scope="session")
def toy_verifier(toy_prefs):
    _, train_path, _ = toy_prefs
    model, history = train(str(train_path), TrainConfig())
    return model


def rng(seed=0):
    return np.random.default_rng(seed)
