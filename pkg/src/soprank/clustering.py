"""k-means (Lloyd iterations, k-means++ seeding) for state subsets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ClusterModel", "ClusteringError", "kmeans", "assign", "sq_distances"]


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int = 0
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.K)


def sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (n_points, n_centroids)."""
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _check_states(states) -> np.ndarray:
    x = np.asarray(states, dtype=np.float64)
    if x.ndim != 2:
        raise ClusteringError(f"states must be 2-d (N x d), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ClusteringError("states contain non-finite values")
    return x


def _plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = sq_distances(x, x[chosen]).min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every point coincides with a chosen centre; pick any unused index
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(unused[rng.integers(len(unused))])
        else:
            idx = int(rng.choice(n, p=closest / total))
        chosen.append(idx)
        closest = np.minimum(closest, sq_distances(x, x[idx : idx + 1])[:, 0])
    return x[chosen].copy()


def _repair_empty(x, centroids, labels, d2) -> np.ndarray:
    """Move the point farthest from its centroid into each empty cluster."""
    k = centroids.shape[0]
    labels = labels.copy()
    for c in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[c] > 0:
            continue
        own = d2[np.arange(len(labels)), labels]
        own = np.where(counts[labels] > 1, own, -1.0)
        far = int(np.argmax(own))
        labels[far] = c
        centroids[c] = x[far]
        d2[far] = sq_distances(x[far : far + 1], centroids)[0]
    return labels


def _inertia(x, centroids, labels) -> float:
    diff = x - centroids[labels]
    return float(np.einsum("nd,nd->", diff, diff))


def _lloyd(x: np.ndarray, K: int, rng: np.random.Generator, max_iters: int) -> ClusterModel:
    centroids = _plus_plus(x, K, rng)
    labels = None
    history: list[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        d2 = sq_distances(x, centroids)
        new_labels = np.argmin(d2, axis=1)
        new_labels = _repair_empty(x, centroids, new_labels, d2)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(K):
            centroids[c] = x[labels == c].mean(axis=0)
        history.append(_inertia(x, centroids, labels))
    # final assignment consistent with the returned centroids
    final = np.argmin(sq_distances(x, centroids), axis=1)
    if np.bincount(final, minlength=K).min() > 0:
        labels = final
    return ClusterModel(
        centroids=centroids,
        assignments=labels.astype(np.int64),
        inertia=_inertia(x, centroids, labels),
        n_iter=it,
        history=tuple(history),
    )


def kmeans(states, K: int, seed: int = 0, max_iters: int = 100, n_init: int = 20) -> ClusterModel:
    """Cluster ``states`` into exactly ``K`` non-empty groups.

    Runs ``n_init`` k-means++ starts drawn from one seeded generator and keeps
    the lowest inertia (first start wins ties). Ties in the nearest-centroid
    rule go to the lowest index. ``history`` is the kept run's inertia per
    iteration and never increases.
    """
    x = _check_states(states)
    n = x.shape[0]
    if K < 1 or n < K:
        raise ClusteringError(f"need N >= K >= 1, got N={n}, K={K}")
    if max_iters < 1 or n_init < 1:
        raise ClusteringError("max_iters and n_init must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(x, K, rng, max_iters)
        if best is None or run.inertia < best.inertia:
            best = run
    return best


def assign(model: ClusterModel, states) -> np.ndarray:
    x = _check_states(states)
    if x.shape[1] != model.centroids.shape[1]:
        raise ClusteringError(
            f"state width {x.shape[1]} does not match centroid width {model.centroids.shape[1]}"
        )
    return np.argmin(sq_distances(x, model.centroids), axis=1)
