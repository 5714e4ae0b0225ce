"""Action vectors, per-dimension normalization, 256-bin tokenization and RMSE.

An action is a float array of shape ``(7,)``: three translation deltas, three
rotation deltas and a binary gripper flag (1 = open). Batches of actions are
arrays of shape ``(n, 7)``; every function here broadcasts over leading axes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ACTION_DIM = 7
CONT_DIM = 6
GRIPPER = 6
N_BINS = 256
BIN_WIDTH = 2.0 / N_BINS


def make_action(continuous, gripper) -> np.ndarray:
    cont = np.asarray(continuous, dtype=np.float64)
    if cont.shape != (CONT_DIM,):
        raise ValueError(f"expected {CONT_DIM} continuous components, got shape {cont.shape}")
    if gripper not in (0, 1):
        raise ValueError(f"gripper must be 0 or 1, got {gripper!r}")
    return np.append(cont, float(gripper))


def is_valid_action(a: np.ndarray, normalized: bool = True) -> bool:
    """True when ``a`` (or every row of ``a``) satisfies the action invariants."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != ACTION_DIM or not np.all(np.isfinite(a)):
        return False
    if not np.all((a[..., GRIPPER] == 0.0) | (a[..., GRIPPER] == 1.0)):
        return False
    if normalized and np.any(np.abs(a[..., :CONT_DIM]) > 1.0):
        return False
    return True


@dataclass(frozen=True)
class NormalizationStats:
    """Calibration bounds for the six continuous dimensions."""

    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        low = np.asarray(self.low, dtype=np.float64)
        high = np.asarray(self.high, dtype=np.float64)
        if low.shape != (CONT_DIM,) or high.shape != (CONT_DIM,):
            raise ValueError("normalization bounds must have 6 entries each")
        if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            raise ValueError("normalization bounds must be finite")
        bad = np.flatnonzero(~(low < high))
        if bad.size:
            raise ValueError(f"normalization requires low < high; violated on dims {bad.tolist()}")
        object.__setattr__(self, "low", tuple(float(x) for x in low))
        object.__setattr__(self, "high", tuple(float(x) for x in high))

    @classmethod
    def from_actions(cls, raw_actions: np.ndarray, q_low: float = 1.0, q_high: float = 99.0):
        """Percentile bounds over a set of raw actions (rows)."""
        cont = np.asarray(raw_actions, dtype=np.float64)[:, :CONT_DIM]
        low = np.percentile(cont, q_low, axis=0)
        high = np.percentile(cont, q_high, axis=0)
        # a dimension with no spread would give low == high
        flat = ~(low < high)
        low = np.where(flat, low - 1e-6, low)
        high = np.where(flat, high + 1e-6, high)
        return cls(tuple(low), tuple(high))

    def to_dict(self) -> dict:
        return {"low": list(self.low), "high": list(self.high)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(tuple(d["low"]), tuple(d["high"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "NormalizationStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


def normalize(a: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Map each continuous dim affinely from [low, high] to [-1, 1], clamping."""
    a = np.array(a, dtype=np.float64)
    low = np.asarray(stats.low)
    high = np.asarray(stats.high)
    scaled = 2.0 * (a[..., :CONT_DIM] - low) / (high - low) - 1.0
    a[..., :CONT_DIM] = np.clip(scaled, -1.0, 1.0)
    return a


def denormalize(a: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Inverse of :func:`normalize` on [-1, 1] (clamped values stay at the bounds)."""
    a = np.array(a, dtype=np.float64)
    low = np.asarray(stats.low)
    high = np.asarray(stats.high)
    a[..., :CONT_DIM] = low + (a[..., :CONT_DIM] + 1.0) * 0.5 * (high - low)
    return a


def rmse(a: np.ndarray, b: np.ndarray) -> np.ndarray | float:
    """Root mean squared difference over all 7 dims, gripper included as 0/1."""
    diff = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    # scale by the largest difference so tiny gaps do not underflow to zero
    scale = np.max(diff, axis=-1, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    out = safe[..., 0] * np.sqrt(np.mean((diff / safe) ** 2, axis=-1))
    return float(out) if out.ndim == 0 else out


def tokenize(a: np.ndarray) -> np.ndarray:
    """Uniform 256-bin tokens; bin i covers [-1 + 2i/256, -1 + 2(i+1)/256)."""
    a = np.asarray(a, dtype=np.float64)
    tokens = np.empty(a.shape, dtype=np.int64)
    cont = np.floor((a[..., :CONT_DIM] + 1.0) / BIN_WIDTH).astype(np.int64)
    tokens[..., :CONT_DIM] = np.clip(cont, 0, N_BINS - 1)
    tokens[..., GRIPPER] = np.where(a[..., GRIPPER] >= 0.5, N_BINS - 1, 0)
    return tokens


def detokenize(t: np.ndarray) -> np.ndarray:
    """Bin midpoints for the continuous dims; gripper token 255 -> 1, 0 -> 0."""
    t = np.asarray(t)
    if np.any((t < 0) | (t > N_BINS - 1)):
        raise ValueError("tokens must lie in [0, 255]")
    a = np.empty(t.shape, dtype=np.float64)
    a[..., :CONT_DIM] = -1.0 + (t[..., :CONT_DIM] + 0.5) * BIN_WIDTH
    a[..., GRIPPER] = (t[..., GRIPPER] >= N_BINS // 2).astype(np.float64)
    return a
