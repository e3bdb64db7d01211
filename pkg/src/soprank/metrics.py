"""Ranking metrics and the train/test policy-set distance."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .policy import PolicySpec, act

__all__ = [
    "MetricError",
    "spearman",
    "regret_at_k",
    "top_k",
    "policy_set_distance",
    "predicted_order",
    "RankedResult",
]


class MetricError(ValueError):
    pass


def spearman(true_values, predicted_values) -> float:
    """Pearson correlation of average-of-ties ranks."""
    a = np.asarray(true_values, dtype=np.float64).reshape(-1)
    b = np.asarray(predicted_values, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size < 2:
        raise MetricError("spearman needs two equal-length sequences of length >= 2")
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if denom == 0.0:
        raise MetricError("spearman undefined: one side is constant")
    return float(np.clip((ra * rb).sum() / denom, -1.0, 1.0))


def predicted_order(scores) -> np.ndarray:
    """Indices by descending score; ties keep the lower index first."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    return np.argsort(-s, kind="stable")


def top_k(scores, k: int) -> np.ndarray:
    return predicted_order(scores)[:k]


def regret_at_k(true_returns, predicted_scores, k: int) -> float:
    v = np.asarray(true_returns, dtype=np.float64).reshape(-1)
    if len(v) != len(np.asarray(predicted_scores).reshape(-1)):
        raise MetricError("true_returns and predicted_scores differ in length")
    if not 1 <= k <= len(v):
        raise MetricError(f"k must be in [1, {len(v)}], got {k}")
    vmax, vmin = v.max(), v.min()
    if vmax == vmin:
        return 0.0
    best_in_top = v[top_k(predicted_scores, k)].max()
    return float((vmax - best_in_top) / (vmax - vmin))


def policy_set_distance(
    train_policies: Sequence[PolicySpec],
    test_policies: Sequence[PolicySpec],
    states,
    max_states: int | None = None,
) -> float:
    """Mean over test policies of the closest train policy's mean squared action gap.

    ``states`` may be a ``StateDataset`` or an array. ``max_states`` keeps only
    the first that many states of a very large pool.
    """
    s = np.asarray(getattr(states, "states", states), dtype=np.float64)
    if max_states is not None:
        s = s[:max_states]
    if not train_policies or not test_policies:
        raise MetricError("both policy sets must be non-empty")
    dims = {(p.state_dim, p.action_dim) for p in (*train_policies, *test_policies)}
    if len(dims) != 1:
        raise MetricError(f"policies disagree on (state_dim, action_dim): {sorted(dims)}")
    a_train = np.stack([act(p, s) for p in train_policies])
    a_test = np.stack([act(p, s) for p in test_policies])
    diff = a_test[:, None] - a_train[None]
    msd = np.einsum("jind,jind->ji", diff, diff) / s.shape[0]
    return float(msd.min(axis=1).mean())


@dataclass
class RankedResult:
    policy_ids: list[str]
    scores: np.ndarray
    true_returns: np.ndarray | None = None
    ks: tuple[int, ...] = (1, 3, 5)
    spearman: float | None = None
    regret_at_k: dict[int, float] = field(default_factory=dict)
    per_subset: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.true_returns is not None:
            self.evaluate(self.true_returns)

    @property
    def ranking(self) -> list[str]:
        return [self.policy_ids[i] for i in self._order()]

    def _order(self) -> np.ndarray:
        # descending score, ties broken by policy id
        keys = sorted(range(len(self.policy_ids)), key=lambda i: (-self.scores[i], self.policy_ids[i]))
        return np.asarray(keys, dtype=np.int64)

    def evaluate(self, true_returns) -> "RankedResult":
        v = np.asarray(true_returns, dtype=np.float64)
        self.true_returns = v
        n = len(v)
        if n >= 2:
            try:
                self.spearman = spearman(v, self.scores)
            except MetricError:
                self.spearman = None
        # rank positions as scores so score ties follow the id order of ``ranking``
        pos = np.empty(n)
        pos[self._order()] = -np.arange(n, dtype=np.float64)
        self.regret_at_k = {k: regret_at_k(v, pos, k) for k in self.ks if k <= n}
        return self

    def to_json(self) -> dict:
        out = {
            "policy_ids": list(self.policy_ids),
            "scores": self.scores.tolist(),
            "ranking": self.ranking,
        }
        if self.true_returns is not None:
            out["true_returns"] = self.true_returns.tolist()
            out["spearman"] = self.spearman
            out["regret_at_k"] = {str(k): v for k, v in self.regret_at_k.items()}
        if self.per_subset is not None:
            out["per_subset_scores"] = self.per_subset.tolist()
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = ["rank  policy                 score" + ("        true_return" if self.true_returns is not None else "")]
        for r, i in enumerate(self._order(), start=1):
            line = f"{r:>4}  {self.policy_ids[i]:<20} {self.scores[i]:>10.5f}"
            if self.true_returns is not None:
                line += f"  {self.true_returns[i]:>12.5f}"
            rows.append(line)
        if self.spearman is not None:
            rows.append(f"spearman = {self.spearman:.4f}")
        for k, v in self.regret_at_k.items():
            rows.append(f"regret@{k} = {v:.4f}")
        return "\n".join(rows)

    def to_svg(self, path) -> None:
        """Score-vs-return scatter next to a ranked score bar chart."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        order = self._order()
        fig, axes = plt.subplots(1, 2 if self.true_returns is not None else 1, figsize=(10, 4), squeeze=False)
        ax = axes[0, 0]
        ax.bar(range(len(order)), self.scores[order])
        ax.set_xticks(range(len(order)), [self.policy_ids[i] for i in order], rotation=90, fontsize=7)
        ax.set_ylabel("predicted score")
        if self.true_returns is not None:
            ax = axes[0, 1]
            ax.scatter(self.true_returns, self.scores)
            ax.set_xlabel("true return")
            ax.set_ylabel("predicted score")
            if self.spearman is not None:
                ax.set_title(f"spearman {self.spearman:.3f}")
        fig.tight_layout()
        fig.savefig(path, format="svg")
        plt.close(fig)
