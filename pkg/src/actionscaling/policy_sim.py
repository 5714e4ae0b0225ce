"""Toy reaching/grasping environment, scripted expert, noisy policies and demo files.

The environment state is an end-effector pose (3 position + 3 orientation), a
gripper flag and a task id. Each task has a 3-D goal position; orientation is
driven toward zero. The expert is a clipped proportional controller that closes
the gripper once inside ``grasp_radius``. Success means the end effector is
within ``success_radius`` of the goal with the gripper closed.

Observations are 16-dim feature vectors: pose (6), gripper (1) and nine
"clutter" features that carry no information about the expert action.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy.special import ndtri

from . import jsonio
from .action_core import (
    ACTION_DIM,
    CONT_DIM,
    GRIPPER,
    NormalizationStats,
    normalize,
)

FORMAT_TAG = "demos/v1"
TOY_BIAS_MAGNITUDE = 0.4
POSE_FEATURES = 7  # pose (6) + gripper (1) lead the feature vector


@dataclass(frozen=True)
class Observation:
    features: np.ndarray
    instruction_id: int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        f.setflags(write=False)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "instruction_id", int(self.instruction_id))

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return self.instruction_id == other.instruction_id and np.array_equal(
            self.features, other.features
        )

    __hash__ = None


@dataclass(frozen=True)
class EnvConfig:
    n_tasks: int = 4
    feature_dim: int = 16
    gain: float = 0.5
    max_translation: float = 0.1
    max_rotation: float = 0.2
    success_radius: float = 0.05
    grasp_radius: float = 0.1
    step_limit: int = 60
    start_range: float = 0.8
    rot_range: float = 0.5
    clutter_scale: float = 0.5
    goal_seed: int = 0
    goals: tuple | None = None

    def __post_init__(self):
        if self.feature_dim < POSE_FEATURES:
            raise ValueError(f"feature_dim must be >= {POSE_FEATURES}")
        if self.goals is not None:
            goals = tuple(tuple(float(x) for x in g) for g in self.goals)
            if len(goals) != self.n_tasks or any(len(g) != 3 for g in goals):
                raise ValueError("goals must hold one 3-D position per task")
            object.__setattr__(self, "goals", goals)

    def goal_array(self) -> np.ndarray:
        if self.goals is not None:
            return np.asarray(self.goals, dtype=np.float64)
        rng = np.random.default_rng([self.goal_seed, 7919])
        return rng.uniform(-0.6, 0.6, size=(self.n_tasks, 3))

    def task_names(self) -> list[str]:
        return [f"reach_and_grasp_{i}" for i in range(self.n_tasks)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["goals"] = None if self.goals is None else [list(g) for g in self.goals]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        if d.get("goals") is not None:
            d["goals"] = tuple(tuple(g) for g in d["goals"])
        return cls(**d)


def expert_raw_action(config: EnvConfig, pose: np.ndarray, task: int, goals=None) -> np.ndarray:
    """Expert action in raw (unnormalized) units from a pose (6,)."""
    goals = config.goal_array() if goals is None else goals
    goal = goals[task]
    to_goal = goal - pose[:3]
    action = np.empty(ACTION_DIM)
    action[:3] = np.clip(config.gain * to_goal, -config.max_translation, config.max_translation)
    action[3:6] = np.clip(-config.gain * pose[3:6], -config.max_rotation, config.max_rotation)
    action[GRIPPER] = 0.0 if np.linalg.norm(to_goal) < config.grasp_radius else 1.0
    return action


class ToyEnv:
    """Kinematic end-effector with per-task goals; actions are raw deltas."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.goals = self.config.goal_array()
        self.pose = np.zeros(6)
        self.gripper = 1.0
        self.task = 0
        self.steps = 0
        self._rng = np.random.default_rng(0)

    def reset(self, task: int, seed, start: np.ndarray | None = None) -> Observation:
        if not 0 <= task < self.config.n_tasks:
            raise ValueError(f"task {task} out of range")
        c = self.config
        self._rng = np.random.default_rng(seed)
        if start is None:
            pos = self._rng.uniform(-c.start_range, c.start_range, 3)
            rot = self._rng.uniform(-c.rot_range, c.rot_range, 3)
            self.pose = np.concatenate([pos, rot])
        else:
            self.pose = np.asarray(start, dtype=np.float64).copy()
        self.task = task
        self.gripper = 1.0
        self.steps = 0
        return self.observe()

    def observe(self) -> Observation:
        c = self.config
        clutter = c.clutter_scale * self._rng.standard_normal(c.feature_dim - POSE_FEATURES)
        features = np.concatenate([self.pose, [self.gripper], clutter])
        return Observation(features, self.task)

    def distance_to_goal(self) -> float:
        return float(np.linalg.norm(self.goals[self.task] - self.pose[:3]))

    def is_success(self) -> bool:
        return self.distance_to_goal() < self.config.success_radius and self.gripper == 0.0

    def expert_action(self) -> np.ndarray:
        return expert_raw_action(self.config, self.pose, self.task, self.goals)

    def step(self, raw_action: np.ndarray) -> tuple[Observation, bool, bool]:
        """Apply a raw action; returns (observation, success, done)."""
        a = np.asarray(raw_action, dtype=np.float64)
        if a.shape != (ACTION_DIM,) or not np.all(np.isfinite(a)):
            raise ValueError(f"invalid action {a!r}")
        self.pose = self.pose + a[:CONT_DIM]
        self.gripper = 0.0 if a[GRIPPER] < 0.5 else 1.0
        self.steps += 1
        success = self.is_success()
        done = success or self.steps >= self.config.step_limit
        return self.observe(), success, done


class DemoFormatError(ValueError):
    code = "format"


class DemoParseError(DemoFormatError):
    code = "parse"

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DemoHeaderError(DemoFormatError):
    code = "header"


class FeatureLengthError(DemoFormatError):
    code = "feature_length"


class NotNormalizedError(DemoFormatError):
    code = "not_normalized"


@dataclass(frozen=True, eq=False)
class DemoDataset:
    """Demo records as parallel arrays; actions are normalized under ``stats``."""

    env: EnvConfig
    stats: NormalizationStats
    features: np.ndarray
    instructions: np.ndarray
    actions: np.ndarray
    task_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        instr = np.array(self.instructions, dtype=np.int64)
        acts = np.array(self.actions, dtype=np.float64)
        if len(acts) == 0:
            raise ValueError("dataset must be nonempty")
        if feats.ndim != 2 or feats.shape[1] != self.env.feature_dim:
            raise FeatureLengthError(
                f"features must have length {self.env.feature_dim}, got shape {feats.shape}"
            )
        if acts.shape != (len(feats), ACTION_DIM) or instr.shape != (len(feats),):
            raise ValueError("features, instructions and actions must align")
        names = tuple(self.task_names) or tuple(self.env.task_names())
        if len(names) != self.env.n_tasks:
            raise DemoHeaderError("task name count must equal n_tasks")
        if np.any((instr < 0) | (instr >= len(names))):
            raise DemoHeaderError("instruction id out of range")
        for arr in (feats, instr, acts):
            arr.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "instructions", instr)
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "task_names", names)

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, i: int) -> tuple[Observation, np.ndarray]:
        return Observation(self.features[i], self.instructions[i]), self.actions[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DemoDataset):
            return NotImplemented
        return (
            self.env == other.env
            and self.stats == other.stats
            and self.task_names == other.task_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.instructions, other.instructions)
            and np.array_equal(self.actions, other.actions)
        )

    def subset(self, indices) -> "DemoDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return DemoDataset(
            self.env, self.stats, self.features[idx], self.instructions[idx],
            self.actions[idx], self.task_names,
        )

    def sample_buffer(self, size: int, seed, uniform: bool = True) -> "DemoDataset":
        """Auxiliary tuple buffer: uniform draw without replacement, or the first ``size`` records."""
        size = min(size, len(self))
        if uniform:
            idx = np.sort(np.random.default_rng(seed).choice(len(self), size, replace=False))
        else:
            idx = np.arange(size)
        return self.subset(idx)

    def split(self, fraction: float, seed) -> tuple["DemoDataset", "DemoDataset"]:
        perm = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(fraction * len(self)))
        if not 0 < cut < len(self):
            raise ValueError("split would leave an empty side")
        return self.subset(np.sort(perm[:cut])), self.subset(np.sort(perm[cut:]))


def generate_demos(env: ToyEnv | EnvConfig, episodes: int, seed) -> DemoDataset:
    """Roll out the expert; task of episode i is ``i % n_tasks``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if isinstance(env, EnvConfig):
        env = ToyEnv(env)
    feats, instr, raw = [], [], []
    for ep in range(episodes):
        task = ep % env.config.n_tasks
        obs = env.reset(task, [*_seed_list(seed), ep])
        while True:
            a = env.expert_action()
            feats.append(obs.features)
            instr.append(obs.instruction_id)
            raw.append(a)
            obs, success, done = env.step(a)
            if success:
                break
            if done:
                raise RuntimeError(
                    f"expert exceeded step limit {env.config.step_limit} in episode {ep}; "
                    "check the environment config"
                )
    raw = np.asarray(raw)
    stats = NormalizationStats.from_actions(raw)
    return DemoDataset(env.config, stats, np.asarray(feats), np.asarray(instr), normalize(raw, stats))


def _seed_list(seed) -> list[int]:
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def derive_seed(seed, *keys: int) -> list[int]:
    """Independent child seed for (seed, keys...) usable with ``default_rng``."""
    return _seed_list(seed) + [int(k) for k in keys]


class StochasticPolicy(Protocol):
    stats: NormalizationStats

    def mode(self, obs: Observation) -> np.ndarray: ...

    def sample(self, obs: Observation, temperature: float, count: int, seed) -> np.ndarray: ...


class NoisyPolicy:
    """Expert plus a fixed bias, with Gaussian noise and gripper flips when sampled.

    Samples are drawn row by row from one ``(count, 7)`` normal block, so the
    first ``m`` samples of a larger request equal a request for ``m``.
    """

    def __init__(
        self,
        env: EnvConfig,
        stats: NormalizationStats,
        noise_scale: float,
        bias=None,
        flip_prob: float = 0.05,
    ):
        if noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        self.env = env
        self.stats = stats
        self.noise_scale = float(noise_scale)
        self.bias = np.zeros(CONT_DIM) if bias is None else np.asarray(bias, dtype=np.float64)
        if self.bias.shape != (CONT_DIM,):
            raise ValueError("bias must have 6 entries")
        self.flip_prob = float(flip_prob)
        self._goals = env.goal_array()

    def expert(self, obs: Observation) -> np.ndarray:
        pose = obs.features[:6]
        return normalize(expert_raw_action(self.env, pose, obs.instruction_id, self._goals), self.stats)

    def mode(self, obs: Observation) -> np.ndarray:
        a = self.expert(obs)
        a[:CONT_DIM] = np.clip(a[:CONT_DIM] + self.bias, -1.0, 1.0)
        return a

    def sample(self, obs: Observation, temperature: float, count: int, seed) -> np.ndarray:
        if count < 1:
            raise ValueError("count must be >= 1")
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        m = self.mode(obs)
        out = np.tile(m, (count, 1))
        if temperature == 0:
            return out
        z = np.random.default_rng(seed).standard_normal((count, ACTION_DIM))
        out[:, :CONT_DIM] = np.clip(m[:CONT_DIM] + self.noise_scale * temperature * z[:, :CONT_DIM], -1.0, 1.0)
        p = min(self.flip_prob * temperature, 1.0)
        if p > 0:
            flip = z[:, GRIPPER] < ndtri(p) if p < 1 else np.ones(count, dtype=bool)
            out[flip, GRIPPER] = 1.0 - out[flip, GRIPPER]
        return out


def toy_bias(magnitude: float = TOY_BIAS_MAGNITUDE) -> np.ndarray:
    """Alternating-sign systematic offset for the simulated policy's mode."""
    return magnitude * np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])


def noisy_policy(dataset: DemoDataset, noise_scale: float, bias=None, flip_prob: float = 0.05) -> NoisyPolicy:
    return NoisyPolicy(dataset.env, dataset.stats, noise_scale, bias, flip_prob)


def save_demos(dataset: DemoDataset, path) -> None:
    header = {
        "format": FORMAT_TAG,
        "feature_dim": dataset.env.feature_dim,
        "tasks": list(dataset.task_names),
        "stats": dataset.stats.to_dict(),
        "env": dataset.env.to_dict(),
        "n_records": len(dataset),
    }
    lines = [jsonio.dumps(header)]
    for f, i, a in zip(dataset.features, dataset.instructions, dataset.actions):
        lines.append(jsonio.dumps({"features": f, "instruction": int(i), "action": a}))
    Path(path).write_text("\n".join(lines) + "\n")


def load_demos(path) -> DemoDataset:
    data = Path(path).read_bytes()
    offset = 0
    header = None
    feats, instr, acts = [], [], []
    for raw_line in data.splitlines(keepends=True):
        line_start = offset
        offset += len(raw_line)
        if not raw_line.strip():
            continue
        try:
            obj = json.loads(raw_line)
        except json.JSONDecodeError as e:
            raise DemoParseError(f"malformed JSON: {e.msg}", line_start + e.pos) from None
        if header is None:
            header = _check_header(obj)
            continue
        try:
            f = np.asarray(obj["features"], dtype=np.float64)
            i = int(obj["instruction"])
            a = np.asarray(obj["action"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise DemoParseError(f"bad record: {e}", line_start) from None
        if f.shape != (header["feature_dim"],):
            raise FeatureLengthError(
                f"record at byte {line_start} has {f.size} features, header says {header['feature_dim']}"
            )
        if a.shape != (ACTION_DIM,) or np.any(np.abs(a[:CONT_DIM]) > 1.0) or a[GRIPPER] not in (0.0, 1.0):
            raise NotNormalizedError(f"record at byte {line_start} holds a non-normalized action")
        feats.append(f)
        instr.append(i)
        acts.append(a)
    if header is None:
        raise DemoParseError("empty file", 0)
    if len(acts) != header["n_records"]:
        raise DemoParseError(
            f"expected {header['n_records']} records, found {len(acts)} (truncated?)", len(data)
        )
    env = header["env"]
    return DemoDataset(
        env, header["stats"], np.asarray(feats), np.asarray(instr), np.asarray(acts), tuple(header["tasks"])
    )


def _check_header(obj) -> dict:
    if not isinstance(obj, dict) or obj.get("format") != FORMAT_TAG:
        raise DemoHeaderError(f"first line must be a {FORMAT_TAG} header object")
    try:
        stats = NormalizationStats.from_dict(obj["stats"])
        env = EnvConfig.from_dict(obj["env"])
        fdim = int(obj["feature_dim"])
        tasks = list(obj["tasks"])
        n = int(obj["n_records"])
    except (KeyError, TypeError, ValueError) as e:
        raise DemoHeaderError(f"invalid header: {e}") from None
    if fdim != env.feature_dim or len(tasks) != env.n_tasks:
        raise DemoHeaderError("header feature_dim/tasks disagree with env config")
    return {"stats": stats, "env": env, "feature_dim": fdim, "tasks": tasks, "n_records": n}


def default_dataset(episodes: int = 200, seed=0, config: EnvConfig | None = None) -> DemoDataset:
    return generate_demos(ToyEnv(config or EnvConfig()), episodes, seed)


__all__: Sequence[str] = [
    "Observation", "EnvConfig", "ToyEnv", "DemoDataset", "NoisyPolicy", "StochasticPolicy",
    "generate_demos", "noisy_policy", "save_demos", "load_demos", "derive_seed",
    "expert_raw_action", "default_dataset", "toy_bias", "TOY_BIAS_MAGNITUDE",
    "DemoFormatError", "DemoParseError", "DemoHeaderError", "FeatureLengthError", "NotNormalizedError",
]
