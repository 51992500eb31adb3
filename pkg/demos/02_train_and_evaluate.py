"""
Training on the synthetic compositional task
============================================

Each sample is an object prototype plus a state pattern confined to a small
block of coordinates, plus noise. A quarter of the (state, object) pairs
never appear in training. We train the full model, then look at the
seen/unseen calibration curve and the open-world setting.
"""

# ## Imports

import logging

import numpy as np

from czsl_stagewise.evaluation import evaluate
from czsl_stagewise.model import CompositionalModel
from czsl_stagewise.training import fit
from czsl_stagewise.workbench.config import ExperimentConfig
from czsl_stagewise.workbench.synthetic import gen_synthetic

logging.basicConfig(level=logging.INFO, format="%(message)s")

# ## Data

cfg = ExperimentConfig().with_seed(0)
data = gen_synthetic(cfg.data)
print(len(data.train_pairs), "seen pairs,", len(data.test_unseen_pairs), "unseen test pairs")
print("split sizes:", {s: len(data.indices(s)) for s in ("train", "val", "test")})

# ## Before training

untrained = CompositionalModel(cfg.model_config(), 8, 10, seed=0)
before = evaluate(untrained, data, "test", "closed", cfg.eval.beta)
print("untrained unseen accuracy %.3f (chance %.3f)" % (before.unseen_acc, 1 / 70))

# ## Training
#
# About half a minute on one core. The weights with the best validation
# AUC are kept.

result = fit(cfg.model_config(), cfg.train, data)
for row in result.history:
    print("epoch %2d  loss %.3f  val AUC %.3f" % (row["epoch"], row["train_loss"], row["val_AUC"]))

# ## Closed world

test = evaluate(result.model, data, "test", "closed", cfg.eval.beta)
print(test.curve.summary())
print("unseen accuracy at bias 0: %.3f" % test.unseen_acc)

# The curve: seen accuracy falls and unseen accuracy rises as the bias
# added to unseen-pair scores grows.
c = test.curve
for i in np.linspace(0, len(c.bias) - 1, 8).astype(int):
    print("bias %9.3f  seen %.3f  unseen %.3f" % (c.bias[i], c.seen_acc[i], c.unseen_acc[i]))

# ## Open world
#
# All 80 pairs become candidates. Feasibility pruning picks the threshold
# that maximizes validation AUC.

plain = evaluate(result.model, data, "test", "open", cfg.eval.beta)
pruned = evaluate(result.model, data, "test", "open", cfg.eval.beta, theta="auto")
print("open world AUC %.3f with %d candidates" % (plain.curve.AUC, len(plain.candidates)))
print("pruned   AUC %.3f with %d candidates (theta %.3f)"
      % (pruned.curve.AUC, len(pruned.candidates), pruned.theta))
