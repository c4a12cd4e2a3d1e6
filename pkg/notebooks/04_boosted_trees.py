"""
A second-order boosted-tree baseline
====================================

The centralized baseline sees every student's rows at once. Each tree is
grown greedily on the gradient and hessian of the log loss, and the gain
of every accepted split is credited to its feature.
"""

# %%
import numpy as np

from fedrec import boost
from fedrec.config import ExperimentConfig
from fedrec.data import central_split, prepare, synthesize_log

cfg = ExperimentConfig()
prepared = prepare(synthesize_log(cfg.synth_config()), 50, 100)
train_set, test_set = central_split(prepared.examples, 0.2, cfg.seed)
print(len(train_set), "training rows,", len(test_set), "test rows")

# %%
# A hand-sized example: four points, two labels, one split.
X = np.array([[1.0], [2.0], [3.0], [4.0]])
g, h = boost.logistic_grad_hess(np.full(4, 0.5), np.array([0, 0, 1, 1.0]))
tree = boost.build_tree(X, g, h, boost.BoosterConfig(max_depth=1))
print("split at x <", tree.threshold, "gain", round(tree.gain, 4))
print("leaf weights", round(tree.left.weight, 4), round(tree.right.weight, 4))

# %%
result = boost.train_tables(train_set, test_set, cfg.booster_config())
best = max(result.history, key=lambda m: m.f1)
print(f"best test F1 {best.f1:.4f} at round {best.round}; final {result.history[-1].f1:.4f}")
print("train log loss: start", round(result.train_loss[0], 4), "end", round(result.train_loss[-1], 4))

# %%
for rank, (name, gain) in enumerate(result.importance.ranking(), 1):
    print(f"{rank}. {name:<24} total gain {gain:9.2f}")

# %%
text = boost.dumps(result.ensemble)
print(len(result.ensemble.trees), "trees,", len(text.splitlines()), "lines in the checkpoint")
print("\n".join(text.splitlines()[:8]))
