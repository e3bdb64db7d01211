"""
Ranking metrics and the policy-set distance
===========================================
"""

import numpy as np

from soprank.metrics import policy_set_distance, regret_at_k, spearman
from soprank.policy import PolicySpec

true = [10, 8, 6, 4, 2]
print("spearman of a near-perfect order", spearman([1, 2, 3, 4, 5], [2, 1, 3, 5, 4]))

# predicted order pi3, pi4, pi5, pi1, pi2: the best policy only shows up at rank 4
pred = [2, 1, 5, 4, 3]
for k in (1, 3, 4):
    print(f"regret@{k}", regret_at_k(true, pred, k))

# distance between policy sets is the mean squared action gap to the closest train policy
rng = np.random.default_rng(0)
states = rng.normal(size=(100, 2))
w = rng.normal(size=(2, 2))
train = [PolicySpec.linear(w)]
shifted = [PolicySpec.linear(w, bias=[0.5, -1.0])]
print("self distance", policy_set_distance(train, train, states))
print("constant offset distance", policy_set_distance(train, shifted, states), "(|c|^2 = 1.25)")
