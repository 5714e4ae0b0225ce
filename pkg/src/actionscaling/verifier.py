"""Action verifier: a small tanh MLP scoring (observation, instruction, action).

Two objectives are supported:

``bt_margin``
    Bradley-Terry on the score gap, penalized by how far the predicted gap
    ``|R(w) - R(l)|`` is from the ground-truth RMSE gap:
    ``-log sigmoid(R(w) - R(l) - alpha * (delta_star - |R(w) - R(l)|)**2)``.
    Higher score means better action.

``rmse_regression``
    Squared error between the score and the RMSE to the ground truth. Lower
    score means better action.

Gradients are computed analytically with respect to the flat weight vector.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .action_core import ACTION_DIM, rmse
from .policy_sim import Observation
from .preference import ComparisonBatch, PreferencePair, load_batches

log = logging.getLogger(__name__)

OBJECTIVES = ("bt_margin", "rmse_regression")


class VerifierModel:
    """``score = w2 . tanh(W1 x + b1) + b2`` with ``x = [features, one-hot task, action]``."""

    def __init__(self, obs_dim: int, n_tasks: int, hidden: int = 64, objective: str = "bt_margin",
                 weights=None, seed=0):
        if objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {objective!r}")
        self.obs_dim = int(obs_dim)
        self.n_tasks = int(n_tasks)
        self.hidden = int(hidden)
        self.objective = objective
        self.input_dim = self.obs_dim + self.n_tasks + ACTION_DIM
        if weights is None:
            weights = self._init_weights(seed)
        weights = np.array(weights, dtype=np.float64)
        if weights.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} weights, got {weights.shape}")
        self.weights = weights

    @property
    def n_params(self) -> int:
        return self.hidden * self.input_dim + 2 * self.hidden + 1

    def _init_weights(self, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        w1 = rng.standard_normal((self.hidden, self.input_dim)) / math.sqrt(self.input_dim)
        w2 = rng.standard_normal(self.hidden) / math.sqrt(self.hidden)
        return np.concatenate([w1.ravel(), np.zeros(self.hidden), w2, [0.0]])

    def unpack(self, weights=None):
        w = self.weights if weights is None else weights
        h, d = self.hidden, self.input_dim
        w1 = w[: h * d].reshape(h, d)
        b1 = w[h * d : h * d + h]
        w2 = w[h * d + h : h * d + 2 * h]
        return w1, b1, w2, w[-1]

    def copy(self) -> "VerifierModel":
        return VerifierModel(self.obs_dim, self.n_tasks, self.hidden, self.objective, self.weights.copy())

    def inputs(self, observation: Observation, actions: np.ndarray) -> np.ndarray:
        feats = np.asarray(observation.features, dtype=np.float64)
        if feats.shape != (self.obs_dim,):
            raise ValueError(f"observation has {feats.size} features, model expects {self.obs_dim}")
        task = observation.instruction_id
        if not 0 <= task < self.n_tasks:
            raise ValueError(f"instruction id {task} outside model range [0, {self.n_tasks})")
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if actions.shape[1] != ACTION_DIM:
            raise ValueError(f"actions must have {ACTION_DIM} dims")
        ctx = np.concatenate([feats, np.eye(self.n_tasks)[task]])
        return np.hstack([np.broadcast_to(ctx, (len(actions), len(ctx))), actions])

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w1, b1, w2, b2 = self.unpack()
        h = np.tanh(x @ w1.T + b1)
        return h @ w2 + b2, h

    def backward(self, x: np.ndarray, h: np.ndarray, grad_scores: np.ndarray) -> np.ndarray:
        """Flat gradient of ``sum(grad_scores * scores)``."""
        _, _, w2, _ = self.unpack()
        dh = np.outer(grad_scores, w2) * (1.0 - h * h)
        return np.concatenate([(dh.T @ x).ravel(), dh.sum(axis=0), grad_scores @ h, [grad_scores.sum()]])

    def scores(self, observation: Observation, actions: np.ndarray) -> np.ndarray:
        return self.forward(self.inputs(observation, actions))[0]

    def to_dict(self) -> dict:
        return {
            "config": {"obs_dim": self.obs_dim, "n_tasks": self.n_tasks, "hidden": self.hidden,
                       "objective": self.objective},
            "weights": self.weights.tolist(),
        }

    def save(self, path) -> None:
        from . import jsonio

        Path(path).write_text(jsonio.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "VerifierModel":
        d = json.loads(Path(path).read_text())
        return cls(**d["config"], weights=d["weights"])


def score(model: VerifierModel, observation: Observation, action: np.ndarray) -> float:
    return float(model.scores(observation, action)[0])


def _bt_terms(sw, sl, delta_star, alpha):
    """Loss per pair and d(loss)/d(R(w)); d(loss)/d(R(l)) is its negative."""
    d = sw - sl
    gap = np.abs(d)
    resid = delta_star - gap
    z = d - alpha * resid * resid
    loss = np.logaddexp(0.0, -z)
    # subgradient of |d| taken as 0 at d = 0
    dz_dd = 1.0 + 2.0 * alpha * resid * np.sign(d)
    return loss, -expit(-z) * dz_dd


def bt_margin_loss(model: VerifierModel, pair: PreferencePair, alpha: float = 0.1) -> tuple[float, np.ndarray]:
    x = model.inputs(pair.observation, np.vstack([pair.winner, pair.loser]))
    s, h = model.forward(x)
    loss, g = _bt_terms(s[0], s[1], pair.delta_star, alpha)
    return float(loss), model.backward(x, h, np.array([g, -g]))


def bt_margin_loss_from_scores(sw, sl, delta_star, alpha) -> np.ndarray:
    return _bt_terms(np.asarray(sw), np.asarray(sl), np.asarray(delta_star), alpha)[0]


def rmse_regression_loss(model: VerifierModel, action, ground_truth, observation: Observation) -> tuple[float, np.ndarray]:
    x = model.inputs(observation, action)
    s, h = model.forward(x)
    r = rmse(np.asarray(action), np.asarray(ground_truth))
    resid = s[0] - r
    return float(resid * resid), model.backward(x, h, np.array([2.0 * resid]))


def batch_loss(model: VerifierModel, batch: ComparisonBatch, alpha: float = 0.1) -> tuple[float, np.ndarray]:
    """Mean loss and gradient over one comparison batch under ``model.objective``."""
    if model.objective == "bt_margin":
        winners, losers = batch.winners(), batch.losers()
        n = len(winners)
        x = model.inputs(batch.observation, np.vstack([winners, losers]))
        s, h = model.forward(x)
        loss, g = _bt_terms(s[:n], s[n:], batch.deltas(), alpha)
        grads = np.concatenate([g, -g]) / n
        return float(loss.mean()), model.backward(x, h, grads)
    actions = np.unique(np.vstack([batch.winners(), batch.losers()]), axis=0)
    x = model.inputs(batch.observation, actions)
    s, h = model.forward(x)
    resid = s - rmse(actions, batch.ground_truth)
    n = len(actions)
    return float(np.mean(resid * resid)), model.backward(x, h, 2.0 * resid / n)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    lr: float = 1e-2
    batch_size: int = 1
    epochs: int = 1
    objective: str = "bt_margin"
    seed: int = 0
    hidden: int = 64
    n_tasks: int = 4

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")

    def to_dict(self) -> dict:
        return asdict(self)


def train(pref, config: TrainConfig = TrainConfig(), eval_pref=None) -> tuple[VerifierModel, list[dict]]:
    """Plain SGD over comparison batches visited in a seed-shuffled order.

    ``pref`` / ``eval_pref`` are a preference file path or a list of batches.
    ``batch_size`` counts comparison batches per step; each batch contributes
    its mean pair loss.
    """
    batches = load_batches(pref) if not isinstance(pref, list) else pref
    if not batches:
        raise ValueError("preference data holds no batches")
    eval_batches = None
    if eval_pref is not None:
        eval_batches = load_batches(eval_pref) if not isinstance(eval_pref, list) else eval_pref
    obs_dim = len(batches[0].observation.features)
    model = VerifierModel(obs_dim, config.n_tasks, config.hidden, config.objective, seed=config.seed)
    rng = np.random.default_rng([config.seed, 1])
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(batches))
        losses = []
        for start in range(0, len(order), config.batch_size):
            grad = np.zeros_like(model.weights)
            chunk = order[start : start + config.batch_size]
            for idx in chunk:
                loss, g = batch_loss(model, batches[idx], config.alpha)
                if not math.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}, step {start // config.batch_size}, batch {idx}: "
                        f"loss={loss}, |w|={np.linalg.norm(model.weights):.3g}"
                    )
                losses.append(loss)
                grad += g
            model.weights -= config.lr * grad / len(chunk)
        row = {"epoch": epoch + 1, "mean_loss": float(np.mean(losses))}
        if eval_batches is not None:
            row["eval_accuracy"] = evaluate_pairs(model, eval_batches)["accuracy"]
        log.info("epoch %d mean loss %.5f", epoch + 1, row["mean_loss"])
        history.append(row)
    return model, history


def write_train_log(history: list[dict], path) -> None:
    lines = ["epoch,mean_loss,eval_accuracy"]
    for row in history:
        acc = row.get("eval_accuracy")
        lines.append(f"{row['epoch']},{row['mean_loss']:.17g},{'' if acc is None else format(acc, '.17g')}")
    Path(path).write_text("\n".join(lines) + "\n")


def _prefers_first(objective: str, s_first, s_second):
    return s_first >= s_second if objective == "bt_margin" else s_first <= s_second


def evaluate_pairs(model, pref, objective: str | None = None, seed=0, scorer=None) -> dict:
    """Pairwise classification metrics.

    Each pair is shown in a seed-determined order (first, second); the label is
    1 when the first action is the true winner and the prediction is 1 when the
    model prefers the first. Score ties predict the first. ``scorer`` optionally
    replaces ``model`` with a callable ``(observation, actions) -> scores``.
    """
    batches = load_batches(pref) if not isinstance(pref, list) else pref
    objective = objective or (model.objective if model is not None else "bt_margin")
    score_fn = scorer or model.scores
    rng = np.random.default_rng([0 if seed is None else seed, 2])
    labels, preds = [], []
    for b in batches:
        n = len(b.pairs)
        if n == 0:
            continue
        s = score_fn(b.observation, np.vstack([b.winners(), b.losers()]))
        sw, sl = s[:n], s[n:]
        swap = rng.random(n) < 0.5
        first, second = np.where(swap, sl, sw), np.where(swap, sw, sl)
        labels.append(~swap)
        preds.append(_prefers_first(objective, first, second))
    if not labels:
        raise ValueError("no pairs to evaluate")
    y = np.concatenate(labels)
    p = np.concatenate(preds)
    tp = int(np.sum(p & y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1, "accuracy": float(np.mean(p == y)),
            "n_pairs": int(len(y))}


def select_best_index(model: VerifierModel, candidates, observation: Observation) -> int:
    actions = candidates.actions if hasattr(candidates, "actions") else np.asarray(candidates)
    if len(actions) == 0:
        raise ValueError("no candidates")
    s = model.scores(observation, actions)
    # argmax/argmin return the first extremum, so ties go to the lowest index
    return int(np.argmax(s) if model.objective == "bt_margin" else np.argmin(s))


def select_best(model: VerifierModel, candidates, observation: Observation) -> np.ndarray:
    actions = candidates.actions if hasattr(candidates, "actions") else np.asarray(candidates)
    return actions[select_best_index(model, actions, observation)]
