"""Logged trajectories, the state pool, and seeded subset plans."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DataError",
    "Trajectory",
    "StateDataset",
    "SubsetPlan",
    "load_trajectories",
    "save_trajectories",
    "extract_states",
    "plan_subsets",
]


class DataError(ValueError):
    pass


def _as_2d(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DataError(f"{name} must be a list of vectors, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        s = _as_2d(self.states, "states")
        a = _as_2d(self.actions, "actions")
        r = np.asarray(self.rewards, dtype=np.float64).reshape(-1)
        if not (len(s) == len(a) == len(r)):
            raise DataError(
                f"length mismatch: states {len(s)}, actions {len(a)}, rewards {len(r)}"
            )
        for name, arr in (("states", s), ("actions", a), ("rewards", r)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite value in {name}")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "rewards", r)

    def __len__(self) -> int:
        return len(self.rewards)

    def to_json(self) -> dict:
        return {
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
        )


def load_trajectories(path) -> list[Trajectory]:
    """Read a JSON-lines trajectory file (one object per line)."""
    trajs: list[Trajectory] = []
    widths: tuple[int, int] | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                traj = Trajectory(obj["states"], obj["actions"], obj["rewards"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: cannot parse trajectory: {exc}") from exc
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            w = (traj.states.shape[1], traj.actions.shape[1])
            if widths is None:
                widths = w
            elif w != widths:
                raise DataError(
                    f"{path}:{lineno}: width {w} differs from first trajectory {widths}"
                )
            trajs.append(traj)
    return trajs


def save_trajectories(trajs: Iterable[Trajectory], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trajs:
            fh.write(json.dumps(t.to_json()) + "\n")


@dataclass(frozen=True)
class StateDataset:
    states: np.ndarray
    task: str = ""
    provenance: str = ""

    def __post_init__(self):
        s = _as_2d(self.states, "states")
        if len(s) < 1:
            raise DataError("state dataset must hold at least one state")
        s.flags.writeable = False
        object.__setattr__(self, "states", s)

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]


def extract_states(trajs: Sequence[Trajectory], task: str = "", provenance: str = "") -> StateDataset:
    """Concatenate the states of all trajectories in order (duplicates kept)."""
    if not trajs:
        raise DataError("need at least one trajectory")
    widths = {t.states.shape[1] for t in trajs}
    if len(widths) != 1:
        raise DataError(f"state widths differ across trajectories: {sorted(widths)}")
    return StateDataset(np.concatenate([t.states for t in trajs]), task, provenance)


@dataclass(frozen=True)
class SubsetPlan:
    seed: int
    subset_size: int
    n_subsets: int
    indices: tuple[np.ndarray, ...] = field(repr=False)

    def __len__(self) -> int:
        return self.n_subsets

    def states(self, ds: StateDataset, t: int) -> np.ndarray:
        return ds.states[self.indices[t]]


def plan_subsets(ds: StateDataset, subset_size: int, n_subsets: int, seed: int) -> SubsetPlan:
    """Draw ``n_subsets`` uniform without-replacement index sets from one seed."""
    if subset_size < 1 or subset_size > ds.n_states:
        raise DataError(f"subset_size {subset_size} must be in [1, {ds.n_states}]")
    if n_subsets < 1:
        raise DataError("n_subsets must be >= 1")
    rng = np.random.default_rng(seed)
    idx = tuple(
        np.sort(rng.choice(ds.n_states, size=subset_size, replace=False))
        for _ in range(n_subsets)
    )
    return SubsetPlan(seed, subset_size, n_subsets, idx)
