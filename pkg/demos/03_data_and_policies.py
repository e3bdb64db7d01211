"""
Logged data, policies and policy representations
================================================

A policy is represented by the actions it would take on a clustered subset
of logged states. Pairwise labels come from known returns.
"""

import tempfile
from pathlib import Path

import numpy as np

from soprank.bench import collect_offline_data, interpolated_policy, pointreach2d
from soprank.clustering import kmeans
from soprank.data import extract_states, load_trajectories, plan_subsets, save_trajectories
from soprank.policy import PolicySpec, build_representation, rank_labels

env = pointreach2d()
behaviour = interpolated_policy(env, coefficient=0.5, noise_seed=0)
trajs = collect_offline_data(env, [behaviour], n_trajectories=20, seed=0)

# JSON-lines round trip
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "data.jsonl"
    save_trajectories(trajs, path)
    print("round trip equal:", load_trajectories(path) == trajs)

ds = extract_states(trajs, task=env.name)
print("state pool", ds.states.shape)

plan = plan_subsets(ds, subset_size=64, n_subsets=3, seed=0)
subset = plan.states(ds, 0)
clusters = kmeans(subset, K=4, seed=0)

# a clipped linear policy and a small tanh network
linear = PolicySpec.linear(-np.eye(2) * 5, action_clip=[[-1, 1], [-1, 1]])
rng = np.random.default_rng(0)
net = PolicySpec("feedforward", 2, 2, [rng.normal(size=(2, 8)), rng.normal(size=(8, 2))],
                 [np.zeros(8), np.zeros(2)], hidden=[8])

for name, pol in (("linear", linear), ("feedforward", net)):
    rep = build_representation(pol, subset, clusters)
    print(name, "pairs", rep.pairs.shape, "first row", np.round(rep.pairs[0], 3))

labels = rank_labels([-3.0, -5.0, -3.0])
print("labels\n", labels.y)
