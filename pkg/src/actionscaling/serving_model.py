"""Closed-form latency model for policy sampling versus Gaussian perturbation.

Latency tables are indexed by batch size on the grid 1, 2, 4, ..., 128. Between
grid points latency is interpolated linearly in log2(batch size); requests
outside the grid are rejected.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BATCH_GRID = (1, 2, 4, 8, 16, 32, 64, 128)
STRATEGIES = ("gaussian", "policy_sampling")

# Measured seconds per batch on one H100 for a 7B policy and verifier.
NAIVE_POLICY_LATENCY = (0.15, 0.31, 0.61, 1.2, 2.4, 4.9, 9.8, 20.0)
SERVED_POLICY_LATENCY = (0.13, 0.21, 0.28, 0.42, 0.72, 1.3, 2.4, 4.6)
VERIFIER_LATENCY = (0.092, 0.099, 0.13, 0.20, 0.35, 0.65, 1.3, 2.5)
PROPOSAL_COST = 1e-5


@dataclass(frozen=True)
class CostProfile:
    policy: tuple[float, ...]
    verifier: tuple[float, ...]
    proposal_cost: float = PROPOSAL_COST
    batch_sizes: tuple[int, ...] = BATCH_GRID

    def __post_init__(self):
        n = len(self.batch_sizes)
        if tuple(self.batch_sizes) != BATCH_GRID[:n] or n < 2:
            raise ValueError(f"batch sizes must be the powers of two starting at 1, got {self.batch_sizes}")
        for name in ("policy", "verifier"):
            table = np.asarray(getattr(self, name), dtype=np.float64)
            if table.shape != (n,):
                raise ValueError(f"{name} table needs {n} entries")
            if np.any(table <= 0) or np.any(np.diff(table) < 0):
                raise ValueError(f"{name} latencies must be positive and non-decreasing in batch size")
            object.__setattr__(self, name, tuple(float(x) for x in table))
        if self.proposal_cost < 0:
            raise ValueError("proposal cost must be >= 0")

    @property
    def max_batch(self) -> int:
        return self.batch_sizes[-1]

    def to_dict(self) -> dict:
        return {"batch_sizes": list(self.batch_sizes), "policy": list(self.policy),
                "verifier": list(self.verifier), "proposal_cost": self.proposal_cost}

    @classmethod
    def from_dict(cls, d: dict) -> "CostProfile":
        return cls(tuple(d["policy"]), tuple(d["verifier"]), float(d.get("proposal_cost", PROPOSAL_COST)),
                   tuple(d.get("batch_sizes", BATCH_GRID[: len(d["policy"])])))

    @classmethod
    def load(cls, path) -> "CostProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def default_profile(policy: str = "served") -> CostProfile:
    """Measured profile; ``policy`` picks the batched serving engine ("served") or the naive one."""
    tables = {"served": SERVED_POLICY_LATENCY, "naive": NAIVE_POLICY_LATENCY}
    if policy not in tables:
        raise ValueError(f"policy table must be one of {sorted(tables)}")
    return CostProfile(tables[policy], VERIFIER_LATENCY)


def interpolate(table, batch_sizes, count: float) -> float:
    if not batch_sizes[0] <= count <= batch_sizes[-1]:
        raise ValueError(f"count {count} outside the profiled batch range [{batch_sizes[0]}, {batch_sizes[-1]}]")
    x = np.log2(np.asarray(batch_sizes, dtype=np.float64))
    return float(np.interp(math.log2(count), x, np.asarray(table)))


def policy_latency(profile: CostProfile, count: float) -> float:
    return interpolate(profile.policy, profile.batch_sizes, count)


def verifier_latency(profile: CostProfile, count: float) -> float:
    return interpolate(profile.verifier, profile.batch_sizes, count)


def latency(profile: CostProfile, strategy: str, n_hat: int, k_hat: int) -> float:
    """Seconds to produce and verify ``k_hat`` candidates.

    gaussian: policy(n_hat) + k_hat * proposal cost + verifier(k_hat)
    policy_sampling: policy(k_hat) + verifier(k_hat)  (``n_hat`` unused)
    """
    if strategy == "gaussian":
        return policy_latency(profile, n_hat) + k_hat * profile.proposal_cost + verifier_latency(profile, k_hat)
    if strategy == "policy_sampling":
        return policy_latency(profile, k_hat) + verifier_latency(profile, k_hat)
    raise ValueError(f"strategy must be one of {STRATEGIES}")


@dataclass(frozen=True, eq=False)
class BudgetCurve:
    strategy: str
    ks: np.ndarray
    latency: np.ndarray
    error: np.ndarray

    def best_error_within(self, budget: float) -> float:
        """Lowest error reachable at or below ``budget`` seconds (inf if none)."""
        ok = self.latency <= budget
        return float(self.error[ok].min()) if np.any(ok) else math.inf

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "latency_s", "mean_rmse", "strategy"])
            for k, t, e in zip(self.ks, self.latency, self.error):
                w.writerow([int(k), format(float(t), ".17g"), format(float(e), ".17g"), self.strategy])


def error_vs_budget(profile: CostProfile, curve, strategy: str, n_hat: int = 5) -> BudgetCurve:
    """Pair each k on a scaling curve with the strategy's latency at k_hat = k."""
    ks = np.asarray(curve.ks)
    bad = ks[(ks < profile.batch_sizes[0]) | (ks > profile.max_batch)]
    if bad.size:
        raise ValueError(
            f"curve k values {bad.tolist()} fall outside the profile grid 1..{profile.max_batch}; "
            f"sweep with k_max <= {profile.max_batch}"
        )
    lat = np.asarray([latency(profile, strategy, n_hat, int(k)) for k in ks])
    return BudgetCurve(strategy, ks.copy(), lat, np.asarray(curve.mean_error, dtype=np.float64).copy())
