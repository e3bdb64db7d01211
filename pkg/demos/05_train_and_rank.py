"""
Learning to rank policies from logged data
==========================================

Generate a family of point-reaching controllers with known returns, train
the scorer on 30 of them and rank 10 held-out ones. This is a reduced run
(2 epochs over 20 subsets) so it finishes in well under a minute.
"""

import numpy as np

from soprank.bench import make_benchmark, pointreach2d
from soprank.metrics import RankedResult
from soprank.model import ScorerConfig, init_model
from soprank.policy import rank_labels
from soprank.training import TrainConfig, build_subset_pool, infer_scores, train

bench = make_benchmark(pointreach2d(), seed=0)
ds = bench.state_dataset()
print("states logged by the training policies:", ds.n_states)

pool = build_subset_pool(ds, subset_size=256, n_subsets=20, K=8, seed=0)
model = init_model(ScorerConfig.toy(d_in=4, K=8), seed=0)
report = train(
    model,
    bench.policies("train"),
    rank_labels(bench.part_returns("train")),
    ds,
    TrainConfig(subset_size=256, n_subsets=20, epochs=2, seed=0),
    pool=pool,
    val_policies=bench.policies("val"),
    val_returns=bench.part_returns("val"),
)
print("mean loss per epoch", np.round(np.reshape(report.losses, (2, -1)).mean(axis=1), 4))
print("validation spearman", report.val_spearman)

scores = infer_scores(model, bench.policies("test"), pool).mean_scores
result = RankedResult(bench.part_ids("test"), scores, true_returns=bench.part_returns("test"), ks=(1, 3))
print(result.to_table())
