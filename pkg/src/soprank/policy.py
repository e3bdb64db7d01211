"""Deterministic policies, their JSON form, and state-action representations."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .clustering import ClusterModel

__all__ = [
    "PolicyError",
    "PolicySpec",
    "PolicyRepresentation",
    "RankLabelMatrix",
    "act",
    "build_representation",
    "rank_labels",
    "load_policy",
    "save_policy",
]

POLICY_FORMAT_VERSION = 1


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicySpec:
    """A linear or tanh feed-forward state -> action map.

    ``weights[i]`` has shape (in_i, out_i); a linear policy holds a single
    layer. ``hidden`` lists the hidden widths of a feed-forward policy.
    """

    kind: str
    state_dim: int
    action_dim: int
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    hidden: tuple[int, ...] = ()
    activation: str = "tanh"
    action_clip: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "feedforward"):
            raise PolicyError(f"unknown policy kind {self.kind!r}")
        if self.activation != "tanh":
            raise PolicyError(f"unsupported activation {self.activation!r}")
        hidden = tuple(int(h) for h in self.hidden)
        if self.kind == "linear" and hidden:
            raise PolicyError("linear policy cannot have hidden layers")
        dims = (self.state_dim, *hidden, self.action_dim)
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        if len(ws) != len(dims) - 1 or len(bs) != len(ws):
            raise PolicyError(f"expected {len(dims) - 1} layers, got {len(ws)} weights / {len(bs)} biases")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise PolicyError(
                    f"layer {i}: weight {w.shape} / bias {b.shape} inconsistent with {dims[i]}->{dims[i + 1]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise PolicyError(f"layer {i}: non-finite parameters")
            w.flags.writeable = False
            b.flags.writeable = False
        clip = None
        if self.action_clip is not None:
            clip = np.array(self.action_clip, dtype=np.float64)
            if clip.shape != (self.action_dim, 2) or np.any(clip[:, 0] > clip[:, 1]):
                raise PolicyError("action_clip must be action_dim pairs with low <= high")
            clip.flags.writeable = False
        object.__setattr__(self, "hidden", hidden)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "action_clip", clip)

    @classmethod
    def linear(cls, weight, bias=None, action_clip=None) -> "PolicySpec":
        w = np.asarray(weight, dtype=np.float64)
        b = np.zeros(w.shape[1]) if bias is None else bias
        return cls("linear", w.shape[0], w.shape[1], (w,), (b,), action_clip=action_clip)

    def to_json(self) -> dict:
        return {
            "version": POLICY_FORMAT_VERSION,
            "kind": self.kind,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "hidden": list(self.hidden),
            "activation": self.activation,
            "action_clip": None if self.action_clip is None else self.action_clip.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PolicySpec":
        if obj.get("version") != POLICY_FORMAT_VERSION:
            raise PolicyError(f"unsupported policy file version {obj.get('version')!r}")
        try:
            return cls(
                kind=obj["kind"],
                state_dim=int(obj["state_dim"]),
                action_dim=int(obj["action_dim"]),
                weights=tuple(obj["weights"]),
                biases=tuple(obj["biases"]),
                hidden=tuple(obj.get("hidden", ())),
                activation=obj.get("activation", "tanh"),
                action_clip=obj.get("action_clip"),
            )
        except KeyError as exc:
            raise PolicyError(f"policy file missing field {exc}") from exc


def load_policy(path) -> PolicySpec:
    with open(path, encoding="utf-8") as fh:
        return PolicySpec.from_json(json.load(fh))


def save_policy(policy: PolicySpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(policy.to_json(), fh)


def act(policy: PolicySpec, state) -> np.ndarray:
    """Action(s) for one state (d,) or a batch of states (n, d)."""
    s = np.asarray(state, dtype=np.float64)
    if s.shape[-1] != policy.state_dim:
        raise PolicyError(f"state width {s.shape[-1]} != policy state_dim {policy.state_dim}")
    h = s
    last = len(policy.weights) - 1
    for i, (w, b) in enumerate(zip(policy.weights, policy.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
    if policy.action_clip is not None:
        h = np.clip(h, policy.action_clip[:, 0], policy.action_clip[:, 1])
    return h


@dataclass(frozen=True)
class PolicyRepresentation:
    pairs: np.ndarray
    cluster_of: np.ndarray
    K: int

    @property
    def n_pairs(self) -> int:
        return self.pairs.shape[0]


def build_representation(policy: PolicySpec, subset_states, cluster_model: ClusterModel) -> PolicyRepresentation:
    states = np.asarray(subset_states, dtype=np.float64)
    if len(states) != len(cluster_model.assignments):
        raise PolicyError(
            f"cluster model covers {len(cluster_model.assignments)} states, subset has {len(states)}"
        )
    actions = act(policy, states)
    pairs = np.concatenate([states, actions], axis=1)
    return PolicyRepresentation(pairs, cluster_model.assignments.copy(), cluster_model.K)


@dataclass(frozen=True)
class RankLabelMatrix:
    y: np.ndarray
    eps_tie: float = 0.0

    @property
    def M(self) -> int:
        return self.y.shape[0]

    def pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Indices (i, j) with i < j and the label y_ij for each."""
        i, j = np.triu_indices(self.M, k=1)
        return i, j, self.y[i, j]

    def subset(self, idx: Sequence[int]) -> "RankLabelMatrix":
        idx = np.asarray(idx)
        return RankLabelMatrix(self.y[np.ix_(idx, idx)], self.eps_tie)


def rank_labels(returns, eps_tie: float = 0.0) -> RankLabelMatrix:
    v = np.asarray(returns, dtype=np.float64).reshape(-1)
    if len(v) < 2:
        raise PolicyError("need at least two policies to build rank labels")
    if eps_tie < 0:
        raise PolicyError("eps_tie must be >= 0")
    if not np.all(np.isfinite(v)):
        raise PolicyError("returns must be finite")
    diff = v[:, None] - v[None, :]
    y = np.full(diff.shape, 0.5)
    y[diff > eps_tie] = 1.0
    y[diff < -eps_tie] = 0.0
    np.fill_diagonal(y, 0.5)
    return RankLabelMatrix(y, float(eps_tie))
