"""Pairwise ranking loss, the subset-pool training loop, and inference."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numgrad as ng
from .clustering import ClusterModel, kmeans
from .data import StateDataset, plan_subsets
from .metrics import MetricError, spearman
from .model import DropoutStream, ScoringModel, save_checkpoint, score_batch
from .numgrad import Tensor
from .policy import PolicySpec, RankLabelMatrix, act

__all__ = [
    "NumericalError",
    "TrainConfig",
    "TrainReport",
    "SubsetPool",
    "build_subset_pool",
    "pairwise_loss",
    "batch_loss",
    "train",
    "infer_scores",
    "InferenceResult",
]

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    subset_size: int = 256
    n_subsets: int = 200
    epochs: int = 10
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eps_tie: float = 0.0
    kmeans_iters: int = 100
    val_subsets: int | None = None
    patience: int | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.n_subsets < 1:
            raise ValueError("n_subsets must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    val_spearman: list[float | None] = field(default_factory=list)
    best_epoch: int | None = None
    best_checkpoint: str | None = None
    stopped_early: bool = False
    best_state: dict | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "losses": self.losses,
            "val_spearman": self.val_spearman,
            "best_epoch": self.best_epoch,
            "best_checkpoint": self.best_checkpoint,
            "stopped_early": self.stopped_early,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class SubsetPool:
    """Fixed list of state subsets, each with its own k-means clustering."""

    states: tuple[np.ndarray, ...]
    clusters: tuple[ClusterModel, ...]
    indices: tuple[np.ndarray, ...] = field(repr=False, default=())

    def __len__(self) -> int:
        return len(self.states)

    def pairs(self, policies: Sequence[PolicySpec], t: int) -> np.ndarray:
        s = self.states[t]
        return np.stack([np.concatenate([s, act(p, s)], axis=1) for p in policies])


def build_subset_pool(ds: StateDataset, subset_size: int, n_subsets: int, K: int, seed: int, kmeans_iters: int = 100) -> SubsetPool:
    if subset_size < K:
        raise ValueError(f"subset_size {subset_size} must be >= K={K}")
    plan = plan_subsets(ds, subset_size, n_subsets, seed)
    states = tuple(plan.states(ds, t) for t in range(n_subsets))
    clusters = tuple(kmeans(s, K, seed=seed + 7919 * (t + 1), max_iters=kmeans_iters) for t, s in enumerate(states))
    return SubsetPool(states, clusters, plan.indices)


def _pair_loss(delta: Tensor, y) -> Tensor:
    # -[y log s(d) + (1-y) log(1-s(d))] == softplus(d) - y*d
    return ng.softplus(delta) - delta * Tensor(np.asarray(y, dtype=np.float64), _check=False)


def pairwise_loss(score_i, score_j, y) -> Tensor:
    """Logistic cross-entropy between ``y`` and sigmoid(score_i - score_j)."""
    si = score_i if isinstance(score_i, Tensor) else Tensor(score_i)
    sj = score_j if isinstance(score_j, Tensor) else Tensor(score_j)
    return _pair_loss(si - sj, y)


def _pair_difference_matrix(M: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    i, j = np.triu_indices(M, k=1)
    D = np.zeros((len(i), M))
    D[np.arange(len(i)), i] = 1.0
    D[np.arange(len(i)), j] = -1.0
    return D, i, j


def loss_from_scores(scores: Tensor, labels: RankLabelMatrix) -> Tensor:
    """Mean pairwise loss over all unordered pairs i < j."""
    M = scores.shape[0]
    if M < 2 or labels.M != M:
        raise ValueError(f"need >= 2 scores matching a {labels.M}x{labels.M} label matrix")
    D, i, j = _pair_difference_matrix(M)
    delta = ng.matmul(Tensor(D, _check=False), scores.reshape(M, 1)).reshape(len(i))
    return _pair_loss(delta, labels.y[i, j]).mean()


def dropout_stream(seed: int, iteration: int) -> DropoutStream:
    return DropoutStream(np.random.default_rng([seed, iteration]))


def batch_loss(
    model: ScoringModel,
    policies: Sequence[PolicySpec],
    labels: RankLabelMatrix,
    subset_states,
    cluster_model: ClusterModel,
    rng: DropoutStream | None = None,
    mode: str = "train",
    pairs: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Score every policy on one subset and average the pairwise losses.

    Returns ``(loss, scores)``. ``rng`` is the dropout stream shared by all
    policies of the pass (see :func:`dropout_stream`); pass ``mode='eval'`` to disable dropout.
    """
    if len(policies) < 2:
        raise ValueError("batch_loss needs at least two policies")
    if pairs is None:
        s = np.asarray(subset_states, dtype=np.float64)
        pairs = np.stack([np.concatenate([s, act(p, s)], axis=1) for p in policies])
    scores = score_batch(model, pairs, cluster_model.assignments, mode, rng)
    return loss_from_scores(scores, labels), scores


@dataclass
class InferenceResult:
    mean_scores: np.ndarray
    per_subset: np.ndarray

    @property
    def ranking(self) -> np.ndarray:
        return np.argsort(-self.mean_scores, kind="stable")


def infer_scores(
    model: ScoringModel, policies: Sequence[PolicySpec], pool: SubsetPool, n_eval_subsets: int | None = None, offset: int = 0
) -> InferenceResult:
    """Eval-mode scores per (subset, policy) and their mean over subsets.

    Uses subsets ``offset .. offset + n_eval_subsets - 1`` of the pool.
    """
    n = len(pool) - offset if n_eval_subsets is None else n_eval_subsets
    if not 1 <= n or offset + n > len(pool):
        raise ValueError(f"cannot take {n} subsets at offset {offset} from a pool of {len(pool)}")
    per = np.empty((n, len(policies)))
    for r, t in enumerate(range(offset, offset + n)):
        per[r] = score_batch(model, pool.pairs(policies, t), pool.clusters[t].assignments, "eval").data
    return InferenceResult(per.mean(axis=0), per)


def train(
    model: ScoringModel,
    policies: Sequence[PolicySpec],
    labels: RankLabelMatrix,
    state_dataset: StateDataset | None,
    config: TrainConfig,
    *,
    pool: SubsetPool | None = None,
    val_policies: Sequence[PolicySpec] = (),
    val_returns=None,
    out_dir=None,
) -> TrainReport:
    """Adam on the mean pairwise loss, cycling through a fixed subset pool.

    Iteration ``t`` uses subset ``t mod n_subsets``. After each epoch the
    validation policies are ranked in eval mode and the parameters with the
    best validation Spearman are kept (and loaded back into ``model`` at the
    end). Without validation policies the final parameters are kept.
    """
    M = len(policies)
    if M < 2:
        raise ValueError("training needs at least two policies")
    if labels.M != M:
        raise ValueError(f"label matrix is {labels.M}x{labels.M} for {M} policies")
    if pool is None:
        pool = build_subset_pool(
            state_dataset, config.subset_size, config.n_subsets, model.config.K, config.seed, config.kmeans_iters
        )
    opt = ng.Adam(
        model.parameters(), ng.AdamHyper(config.lr, config.beta1, config.beta2, config.adam_eps)
    )
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = TrainReport()
    cache: dict[int, np.ndarray] = {}
    best, since_best = -np.inf, 0
    has_val = len(val_policies) >= 2 and val_returns is not None
    t = 0
    for epoch in range(config.epochs):
        for k in range(len(pool)):
            if k not in cache:
                cache[k] = pool.pairs(policies, k)
            opt.zero_grad()
            loss, scores = batch_loss(
                model, policies, labels, None, pool.clusters[k], dropout_stream(config.seed, t), pairs=cache[k]
            )
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite loss at iteration {t} (subset {k}); scores={scores.data.tolist()}"
                )
            loss.backward()
            opt.step()
            report.losses.append(value)
            t += 1
        val_rho = None
        if has_val:
            res = infer_scores(model, val_policies, pool, config.val_subsets)
            try:
                val_rho = spearman(val_returns, res.mean_scores)
            except MetricError:
                val_rho = None
        report.val_spearman.append(val_rho)
        logger.info("epoch %d loss %.5f val_spearman %s", epoch, np.mean(report.losses[-len(pool):]), val_rho)
        score_now = val_rho if val_rho is not None else (-np.inf if has_val else epoch)
        if score_now > best or report.best_state is None:
            best, since_best = score_now, 0
            report.best_epoch = epoch
            report.best_state = model.state_dict()
            if out is not None:
                save_checkpoint(model, out / "best.ckpt", extra={"epoch": epoch, "val_spearman": val_rho})
                report.best_checkpoint = "best.ckpt"
        else:
            since_best += 1
        if out is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, out / f"epoch{epoch:04d}.ckpt", extra={"epoch": epoch})
        if config.patience is not None and since_best > config.patience:
            report.stopped_early = True
            break
    model.load_state_dict(report.best_state)
    if out is not None:
        report.save(out / "train_report.json")
    return report
