"""Oracle best-of-k sweeps and log-log power-law fits of error against sample count."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .action_core import rmse
from .policy_sim import Observation, derive_seed
from .sampling import Sampler

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ScalingCurve:
    ks: np.ndarray
    mean_error: np.ndarray
    stderr: np.ndarray
    sampler: str

    def error_at(self, k: int) -> float:
        hits = np.flatnonzero(self.ks == k)
        if not hits.size:
            raise KeyError(f"k={k} not on the curve grid")
        return float(self.mean_error[hits[0]])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "mean_rmse", "stderr"])
            for k, e, s in zip(self.ks, self.mean_error, self.stderr):
                w.writerow([int(k), format(float(e), ".17g"), format(float(s), ".17g")])

    def to_dict(self) -> dict:
        return {
            "sampler": self.sampler,
            "k": [int(k) for k in self.ks],
            "mean_rmse": [float(e) for e in self.mean_error],
            "stderr": [float(s) for s in self.stderr],
        }


@dataclass(frozen=True)
class PowerLawFit:
    a: float
    b: float
    r_squared: float
    n_points: int

    def predict(self, k) -> np.ndarray:
        return self.a * np.power(np.asarray(k, dtype=np.float64), self.b)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "r_squared": self.r_squared, "n_points": self.n_points}


def k_grid(k_max: int) -> np.ndarray:
    """Powers of two from 1 up to ``k_max`` (``k_max`` itself appended if not a power of two)."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    ks = [1 << i for i in range(int(math.log2(k_max)) + 1)]
    if ks[-1] != k_max:
        ks.append(k_max)
    return np.asarray(ks, dtype=np.int64)


def prefix_min_errors(candidates: np.ndarray, ground_truth: np.ndarray) -> np.ndarray:
    """Running minimum RMSE over the first 1, 2, ... candidates."""
    return np.minimum.accumulate(rmse(candidates, ground_truth))


def oracle_best_of_k(
    tuples, sampler: Sampler, k_max: int, seed, tag: str = "custom"
) -> ScalingCurve:
    """Mean min-RMSE over nested candidate prefixes, one draw of ``k_max`` per tuple.

    ``tuples`` is a sequence of ``(Observation, ground_truth_action)``. Tuple ``i``
    draws with seed ``(seed, i)``, so results do not depend on evaluation order.
    """
    ks = k_grid(k_max)
    rows = []
    for i, (obs, gt) in enumerate(tuples):
        try:
            cands = sampler(obs, k_max, derive_seed(seed, i)).actions
        except Exception as e:
            raise RuntimeError(f"sampler failed on tuple {i}: {e}") from e
        if len(cands) < k_max:
            raise RuntimeError(f"sampler returned {len(cands)} < {k_max} candidates on tuple {i}")
        rows.append(prefix_min_errors(cands[:k_max], gt)[ks - 1])
    if not rows:
        raise ValueError("need at least one tuple")
    errs = np.asarray(rows)
    n = len(errs)
    stderr = errs.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(ks))
    return ScalingCurve(ks, errs.mean(axis=0), stderr, tag)


def dataset_tuples(dataset) -> list[tuple[Observation, np.ndarray]]:
    return [dataset[i] for i in range(len(dataset))]


def fit_power_law(curve: ScalingCurve | tuple, drop_zeros: bool = False) -> PowerLawFit:
    """OLS of log(error) on log(k): error ~= a * k**b.

    Zero-error points make the log undefined; they raise unless ``drop_zeros``
    is set, in which case they are excluded with a warning.
    """
    if isinstance(curve, ScalingCurve):
        ks, errs = curve.ks, curve.mean_error
    else:
        ks, errs = curve
    ks = np.asarray(ks, dtype=np.float64)
    errs = np.asarray(errs, dtype=np.float64)
    keep = ks >= 1
    zero = keep & (errs <= 0)
    if np.any(zero):
        if not drop_zeros:
            raise ValueError(
                f"{int(zero.sum())} curve point(s) have zero error; exclude exact hits before fitting"
            )
        log.warning("excluding %d zero-error points from power-law fit", int(zero.sum()))
        keep &= ~zero
    x, y = np.log(ks[keep]), np.log(errs[keep])
    if len(x) < 3:
        raise ValueError(f"power-law fit needs at least 3 points with positive error, got {len(x)}")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum(resid**2))
    # a flat curve is fit exactly by b = 0
    r2 = 1.0 if ss_tot < 1e-24 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return PowerLawFit(math.exp(intercept), slope, r2, int(len(x)))


def relative_reduction(curve: ScalingCurve) -> float:
    """(e(1) - e(k_max)) / e(1)."""
    if curve.ks[0] != 1:
        raise ValueError("curve has no k=1 entry")
    e1 = float(curve.mean_error[0])
    if e1 <= 0:
        raise ValueError("relative reduction is undefined when e(1) = 0")
    return (e1 - float(curve.mean_error[-1])) / e1


def write_fit(fit: PowerLawFit, path, extra: dict | None = None) -> None:
    d = fit.to_dict()
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
