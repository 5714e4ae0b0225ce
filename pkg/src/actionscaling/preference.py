"""Synthetic action comparisons: sample, cluster to representatives, label pairs by RMSE."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterator

import numpy as np

from . import jsonio
from .action_core import ACTION_DIM, rmse
from .policy_sim import DemoDataset, Observation, StochasticPolicy, derive_seed
from .sampling import CandidateSet, sample_policy

KMEANS_ITERS = 50


@dataclass(frozen=True, eq=False)
class PreferencePair:
    winner: np.ndarray
    loser: np.ndarray
    ground_truth: np.ndarray
    observation: Observation
    delta_star: float

    @property
    def instruction_id(self) -> int:
        return self.observation.instruction_id


@dataclass(frozen=True, eq=False)
class ComparisonBatch:
    observation: Observation
    ground_truth: np.ndarray
    pairs: tuple[PreferencePair, ...]

    @property
    def instruction_id(self) -> int:
        return self.observation.instruction_id

    def winners(self) -> np.ndarray:
        return np.asarray([p.winner for p in self.pairs])

    def losers(self) -> np.ndarray:
        return np.asarray([p.loser for p in self.pairs])

    def deltas(self) -> np.ndarray:
        return np.asarray([p.delta_star for p in self.pairs])

    def to_json(self) -> str:
        return jsonio.dumps({
            "obs": self.observation.features,
            "instruction": self.instruction_id,
            "gt": self.ground_truth,
            "pairs": [{"w": p.winner, "l": p.loser, "delta": p.delta_star} for p in self.pairs],
        })

    @classmethod
    def from_json(cls, line: str | bytes) -> "ComparisonBatch":
        d = json.loads(line)
        obs = Observation(np.asarray(d["obs"], dtype=np.float64), int(d["instruction"]))
        gt = np.asarray(d["gt"], dtype=np.float64)
        pairs = tuple(
            PreferencePair(np.asarray(p["w"], dtype=np.float64), np.asarray(p["l"], dtype=np.float64),
                           gt, obs, float(p["delta"]))
            for p in d["pairs"]
        )
        return cls(obs, gt, pairs)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every point coincides with a chosen center
            idx = rng.integers(len(x))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, len(x) - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.asarray(centers)


def kmeans(x: np.ndarray, k: int, seed, iters: int = KMEANS_ITERS) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations from k-means++ seeds; empty clusters keep their center."""
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, k, rng)
    labels = None
    for _ in range(iters):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return centers, labels


def cluster_candidates(candidates: CandidateSet | np.ndarray, k: int, seed) -> np.ndarray:
    """Up to ``k`` representative sampled actions: the candidate nearest each centroid, deduplicated."""
    x = candidates.actions if isinstance(candidates, CandidateSet) else np.asarray(candidates, dtype=np.float64)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(x) < k:
        raise ValueError(f"cannot cluster {len(x)} candidates into {k} groups")
    centers, _ = kmeans(x, k, seed)
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    nearest = np.argmin(d2, axis=0)
    reps = []
    for idx in nearest:
        if not any(np.array_equal(x[idx], r) for r in reps):
            reps.append(x[idx])
    return np.asarray(reps)


def build_pairs(representatives: np.ndarray, ground_truth: np.ndarray, observation: Observation) -> ComparisonBatch:
    """All unordered pairs; lower RMSE to ground truth wins, ties go to the earlier index."""
    reps = np.asarray(representatives, dtype=np.float64)
    if len(reps) < 2:
        raise ValueError("need at least 2 representatives")
    gt = np.asarray(ground_truth, dtype=np.float64)
    errs = rmse(reps, gt)
    pairs = []
    for i, j in combinations(range(len(reps)), 2):
        w, l = (i, j) if errs[i] <= errs[j] else (j, i)
        pairs.append(PreferencePair(reps[w], reps[l], gt, observation, abs(float(errs[w] - errs[l]))))
    return ComparisonBatch(observation, gt, tuple(pairs))


def comparison_batch(
    policy: StochasticPolicy, obs: Observation, gt: np.ndarray, n: int, k: int, temperature: float, seed
) -> ComparisonBatch | None:
    cands = sample_policy(policy, obs, temperature, n, derive_seed(seed, 0))
    reps = cluster_candidates(cands, k, derive_seed(seed, 1))
    if len(reps) < 2:
        return None
    return build_pairs(reps, gt, obs)


def generate_preference_dataset(
    dataset: DemoDataset,
    policy: StochasticPolicy,
    n: int = 32,
    k: int = 6,
    temperature: float = 1.0,
    seed=0,
    out_path=None,
) -> dict:
    """Write one comparison batch per dataset tuple to ``out_path`` (JSON Lines).

    Tuples that collapse to a single representative are skipped. The partial
    file is removed if writing fails.
    """
    if not n >= k >= 2:
        raise ValueError("need n >= k >= 2")
    out_path = Path(out_path)
    tuples = pairs = skipped = 0
    try:
        with open(out_path, "w") as fh:
            for i in range(len(dataset)):
                obs, gt = dataset[i]
                batch = comparison_batch(policy, obs, gt, n, k, temperature, derive_seed(seed, i))
                tuples += 1
                if batch is None:
                    skipped += 1
                    continue
                fh.write(batch.to_json() + "\n")
                pairs += len(batch.pairs)
    except BaseException:
        if out_path.exists():
            os.remove(out_path)
        raise
    return {"tuples": tuples, "pairs": pairs, "skipped": skipped, "n": n, "k": k, "temperature": temperature}


def iter_batches(path) -> Iterator[ComparisonBatch]:
    with open(path, "rb") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield ComparisonBatch.from_json(line)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise ValueError(f"{path}:{lineno}: malformed comparison batch ({e})") from None


def load_batches(path) -> list[ComparisonBatch]:
    return list(iter_batches(path))


def audit_file(path, tol: float = 1e-12) -> dict:
    """Recompute both RMSEs of every pair from raw JSON and count invariant violations.

    Deliberately re-parses with ``json`` and recomputes RMSE with plain math so
    it shares no code path with the writer.
    """
    import math

    def _rmse(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)) / len(a))

    n_pairs = violations = batches = 0
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            batches += 1
            gt = d["gt"]
            if len(gt) != ACTION_DIM:
                violations += 1
            for p in d["pairs"]:
                n_pairs += 1
                ew, el = _rmse(p["w"], gt), _rmse(p["l"], gt)
                if ew > el + tol or abs(abs(ew - el) - p["delta"]) > tol:
                    violations += 1
    return {"batches": batches, "pairs": n_pairs, "violations": violations}
