"""
k-means on a cloud of states
============================
"""

import numpy as np

from soprank.clustering import assign, kmeans

rng = np.random.default_rng(1)
centres = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
states = np.vstack([c + 0.3 * rng.normal(size=(40, 2)) for c in centres])

model = kmeans(states, K=3, seed=0)
print("centroids\n", np.round(model.centroids, 3))
print("cluster sizes", model.sizes())
print("inertia per iteration", np.round(model.history, 4))

# the nearest-centroid rule sends new points to the right blob
print("assign", assign(model, [[0.1, 0.1], [2.9, 0.2], [-0.2, 3.1]]))

# same seed, same answer
again = kmeans(states, K=3, seed=0)
print("deterministic:", np.array_equal(model.centroids, again.centroids))
