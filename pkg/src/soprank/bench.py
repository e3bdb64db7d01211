"""Synthetic control tasks with computable ground truth.

``pointreach2d`` is a noisy 2-D point mass rewarded for staying near the
origin. ``lineworld1d`` is its 1-D analogue on a grid with three-valued
noise, small enough that expected returns can be computed exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import StateDataset, Trajectory, extract_states, save_trajectories
from .policy import PolicySpec, act, save_policy

__all__ = [
    "EnvSpec",
    "PolicyFamily",
    "Benchmark",
    "pointreach2d",
    "lineworld1d",
    "make_env",
    "reset",
    "step",
    "rollout",
    "monte_carlo_return",
    "lineworld_exact_return",
    "optimal_gain",
    "gen_policy_family",
    "collect_offline_data",
    "make_benchmark",
]


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    horizon: int = 20
    gamma: float = 0.99
    noise_std: float = 0.05
    step_scale: float = 0.1
    action_bound: float = 1.0
    init_range: float = 1.0
    init_state: tuple[float, ...] | None = None
    grid_half_width: int = 10

    def __post_init__(self):
        if self.name not in ("pointreach2d", "lineworld1d"):
            raise ValueError(f"unknown environment {self.name!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.name == "lineworld1d" and self.noise_std > self.step_scale:
            raise ValueError("lineworld1d noise_std cannot exceed the grid spacing")

    @property
    def flip_prob(self) -> float:
        """lineworld1d: probability of a one-cell noise jump (split evenly +/-)."""
        return (self.noise_std / self.step_scale) ** 2

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "EnvSpec":
        obj = dict(obj)
        if obj.get("init_state") is not None:
            obj["init_state"] = tuple(obj["init_state"])
        return cls(**obj)


def pointreach2d(**kw) -> EnvSpec:
    return EnvSpec("pointreach2d", 2, 2, **kw)


def lineworld1d(**kw) -> EnvSpec:
    return EnvSpec("lineworld1d", 1, 1, **kw)


def make_env(name: str, **kw) -> EnvSpec:
    return {"pointreach2d": pointreach2d, "lineworld1d": lineworld1d}[name](**kw)


def reset(env: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    if env.init_state is not None:
        return np.array(env.init_state, dtype=np.float64)
    if env.name == "lineworld1d":
        n = env.grid_half_width
        return np.array([rng.integers(-n, n + 1) * env.step_scale])
    return rng.uniform(-env.init_range, env.init_range, size=env.state_dim)


def _lineworld_cell(env: EnvSpec, state) -> int:
    return int(round(float(np.asarray(state).reshape(-1)[0]) / env.step_scale))


def _lineworld_move(env: EnvSpec, action) -> int:
    a = float(np.clip(np.asarray(action).reshape(-1)[0], -env.action_bound, env.action_bound))
    return int(np.rint(a / env.action_bound))


def _lineworld_next(env: EnvSpec, cell: int, move: int, jump: int) -> int:
    n = env.grid_half_width
    return int(np.clip(cell + move + jump, -n, n))


def step(env: EnvSpec, state, action, rng: np.random.Generator | None) -> tuple[np.ndarray, float]:
    """One transition; returns (next_state, reward) with reward = -||next||."""
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if state.shape != (env.state_dim,) or action.shape != (env.action_dim,):
        raise ValueError(f"{env.name}: expected state ({env.state_dim},), action ({env.action_dim},)")
    if env.name == "pointreach2d":
        nxt = state + env.step_scale * np.clip(action, -env.action_bound, env.action_bound)
        if env.noise_std > 0:
            nxt = nxt + rng.normal(0.0, env.noise_std, size=env.state_dim)
        return nxt, -float(np.linalg.norm(nxt))
    cell = _lineworld_cell(env, state)
    jump = 0
    p = env.flip_prob
    if p > 0:
        u = rng.random()
        jump = -1 if u < p / 2 else (1 if u < p else 0)
    nxt_cell = _lineworld_next(env, cell, _lineworld_move(env, action), jump)
    nxt = np.array([nxt_cell * env.step_scale])
    return nxt, -abs(nxt_cell) * env.step_scale


def rollout(env: EnvSpec, policy: PolicySpec, rng: np.random.Generator) -> Trajectory:
    """Run horizon+1 steps from a fresh initial state."""
    s = reset(env, rng)
    states, actions, rewards = [], [], []
    for _ in range(env.horizon + 1):
        a = act(policy, s)
        states.append(s)
        actions.append(a)
        s, r = step(env, s, a, rng)
        rewards.append(r)
    return Trajectory(np.array(states), np.array(actions), np.array(rewards))


def discounted(rewards, gamma: float) -> float:
    r = np.asarray(rewards, dtype=np.float64)
    return float(np.sum(r * gamma ** np.arange(len(r))))


def monte_carlo_return(
    env: EnvSpec, policy: PolicySpec, n_rollouts: int = 100, gamma: float | None = None, seed: int = 0
) -> tuple[float, float]:
    """Mean discounted return and its standard error.

    Rollout ``i`` uses generator ``(seed, i)`` whatever the policy, so every
    policy faces the same initial states and noise draws.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    g = env.gamma if gamma is None else gamma
    rets = np.array(
        [discounted(rollout(env, policy, np.random.default_rng([seed, i])).rewards, g) for i in range(n_rollouts)]
    )
    se = float(rets.std(ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return float(rets.mean()), se


def lineworld_exact_return(env: EnvSpec, policy: PolicySpec, gamma: float | None = None) -> float:
    """Exact expected return on lineworld1d by backward dynamic programming."""
    if env.name != "lineworld1d":
        raise ValueError("exact returns are only available for lineworld1d")
    g = env.gamma if gamma is None else gamma
    n = env.grid_half_width
    cells = np.arange(-n, n + 1)
    moves = {c: _lineworld_move(env, act(policy, np.array([c * env.step_scale]))) for c in cells}
    p = env.flip_prob
    jumps = [(-1, p / 2), (0, 1.0 - p), (1, p / 2)]
    value = {c: 0.0 for c in cells}
    for _ in range(env.horizon + 1):
        new = {}
        for c in cells:
            total = 0.0
            for jump, prob in jumps:
                if prob == 0.0:
                    continue
                nc = _lineworld_next(env, c, moves[c], jump)
                total += prob * (-abs(nc) * env.step_scale + g * value[nc])
            new[c] = total
        value = new
    if env.init_state is not None:
        return value[_lineworld_cell(env, env.init_state)]
    return float(np.mean([value[c] for c in cells]))


def optimal_gain(env: EnvSpec) -> np.ndarray:
    """Proportional gain that cancels the position in one unclipped step."""
    return -np.eye(env.state_dim, env.action_dim) / env.step_scale


@dataclass
class PolicyFamily:
    policies: list[PolicySpec]
    coefficients: np.ndarray
    noise_seeds: list[int]
    returns: np.ndarray | None = None
    return_se: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.policies)

    def evaluate(self, env: EnvSpec, n_rollouts: int = 100, seed: int = 0) -> "PolicyFamily":
        out = [monte_carlo_return(env, p, n_rollouts, seed=seed) for p in self.policies]
        self.returns = np.array([m for m, _ in out])
        self.return_se = np.array([s for _, s in out])
        return self


def interpolated_policy(env: EnvSpec, coefficient: float, noise_seed: int, random_scale: float = 1.0) -> PolicySpec:
    rng = np.random.default_rng(noise_seed)
    d, k = env.state_dim, env.action_dim
    # the random gain drifts away from the origin on average
    random_gain = random_scale * (rng.normal(size=(d, k)) + np.eye(d, k))
    w = (1.0 - coefficient) * random_gain + coefficient * optimal_gain(env)
    clip = np.tile([-env.action_bound, env.action_bound], (k, 1))
    return PolicySpec.linear(w, np.zeros(k), action_clip=clip)


def gen_policy_family(
    env: EnvSpec, count: int, quality_range: tuple[float, float] = (0.0, 1.0), seed: int = 0
) -> PolicyFamily:
    """Linear policies interpolating random gains toward :func:`optimal_gain`.

    Coefficients are evenly spaced over ``quality_range``; each policy draws
    its own random gain. Returns are left empty until :meth:`PolicyFamily.evaluate`.
    """
    if count < 2:
        raise ValueError("a policy family needs at least two members")
    lo, hi = quality_range
    coeffs = np.linspace(lo, hi, count)
    seeds = [int(s) for s in np.random.default_rng(seed).integers(0, 2**31 - 1, size=count)]
    policies = [interpolated_policy(env, c, s) for c, s in zip(coeffs, seeds)]
    return PolicyFamily(policies, coeffs, seeds)


def collect_offline_data(
    env: EnvSpec, behavior_policies: Sequence[PolicySpec], n_trajectories: int, seed: int = 0
) -> list[Trajectory]:
    """Trajectory ``j`` follows behaviour policy ``j mod len(behaviors)``."""
    if n_trajectories > 0 and not behavior_policies:
        raise ValueError("need at least one behaviour policy")
    return [
        rollout(env, behavior_policies[j % len(behavior_policies)], np.random.default_rng([seed, 1, j]))
        for j in range(n_trajectories)
    ]


@dataclass
class Benchmark:
    env: EnvSpec
    family: PolicyFamily
    policy_ids: list[str]
    split: dict[str, list[int]]
    trajectories: list[Trajectory]
    seed: int
    n_rollouts: int
    config: dict = field(default_factory=dict)

    @property
    def returns(self) -> np.ndarray:
        return self.family.returns

    def policies(self, part: str) -> list[PolicySpec]:
        return [self.family.policies[i] for i in self.split[part]]

    def part_returns(self, part: str) -> np.ndarray:
        return self.family.returns[self.split[part]]

    def part_ids(self, part: str) -> list[str]:
        return [self.policy_ids[i] for i in self.split[part]]

    def state_dataset(self) -> StateDataset:
        return extract_states(self.trajectories, task=self.env.name, provenance=f"synthetic seed={self.seed}")

    def manifest(self, policy_dir: str = "policies", data_file: str = "data.jsonl") -> dict:
        return {
            "version": 1,
            "env": self.env.to_json(),
            "seed": self.seed,
            "n_rollouts": self.n_rollouts,
            "data": data_file,
            "split": {k: self.part_ids(k) for k in self.split},
            "policies": [
                {
                    "id": pid,
                    "path": f"{policy_dir}/{pid}.json",
                    "true_return": float(self.family.returns[i]),
                    "return_se": float(self.family.return_se[i]),
                    "coefficient": float(self.family.coefficients[i]),
                    "noise_seed": self.family.noise_seeds[i],
                }
                for i, pid in enumerate(self.policy_ids)
            ],
            "config": self.config,
        }

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        (out / "policies").mkdir(parents=True, exist_ok=True)
        for pid, pol in zip(self.policy_ids, self.family.policies):
            save_policy(pol, out / "policies" / f"{pid}.json")
        save_trajectories(self.trajectories, out / "data.jsonl")
        path = out / "manifest.json"
        path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def make_benchmark(
    env: EnvSpec,
    n_policies: int = 50,
    split: tuple[int, int, int] = (30, 10, 10),
    n_rollouts: int = 100,
    n_trajectories: int = 200,
    quality_range: tuple[float, float] = (0.0, 1.0),
    seed: int = 0,
) -> Benchmark:
    """Policy family, ground-truth returns, a random train/val/test split and
    offline data logged by the training policies."""
    if sum(split) != n_policies:
        raise ValueError(f"split {split} does not add up to {n_policies} policies")
    family = gen_policy_family(env, n_policies, quality_range, seed=seed)
    family.evaluate(env, n_rollouts, seed=seed + 1)
    perm = np.random.default_rng([seed, 2]).permutation(n_policies)
    a, b = split[0], split[0] + split[1]
    parts = {
        "train": sorted(int(i) for i in perm[:a]),
        "val": sorted(int(i) for i in perm[a:b]),
        "test": sorted(int(i) for i in perm[b:]),
    }
    ids = [f"pi{i:03d}" for i in range(n_policies)]
    behaviors = [family.policies[i] for i in parts["train"]]
    trajs = collect_offline_data(env, behaviors, n_trajectories, seed=seed)
    cfg = {
        "n_policies": n_policies,
        "split": list(split),
        "n_trajectories": n_trajectories,
        "quality_range": list(quality_range),
    }
    return Benchmark(env, family, ids, parts, trajs, seed, n_rollouts, cfg)
