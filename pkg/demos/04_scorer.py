"""
The hierarchical set scorer
===========================

Pairs are encoded inside each cluster, pooled, encoded again across
clusters and projected to one number. Nothing depends on order.
"""

import tempfile
from pathlib import Path

import numpy as np

from soprank.model import ScorerConfig, init_model, load_checkpoint, save_checkpoint, score
from soprank.policy import PolicyRepresentation

print("reference sizes:", ScorerConfig(d_in=4))

cfg = ScorerConfig.toy(d_in=4, K=4)
model = init_model(cfg, seed=0)
print("toy model parameters:", model.n_params)

rng = np.random.default_rng(0)
cluster_of = rng.integers(0, 4, size=32)
rep = PolicyRepresentation(rng.normal(size=(32, 4)), cluster_of, 4)
s = score(model, rep).item()

perm = rng.permutation(32)
shuffled = PolicyRepresentation(rep.pairs[perm], cluster_of[perm], 4)
relabelled = PolicyRepresentation(rep.pairs, np.array([3, 1, 0, 2])[cluster_of], 4)
print("score", s)
print("after shuffling pairs  ", score(model, shuffled).item())
print("after relabelling clusters", score(model, relabelled).item())

# train mode applies dropout from the given generator
print("train-mode score", score(model, rep, "train", np.random.default_rng(1)).item())

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.ckpt"
    save_checkpoint(model, path)
    print("checkpoint bytes", path.stat().st_size)
    print("reloaded score identical:", score(load_checkpoint(path), rep).item() == s)
