"""
Which parts of the interaction matter?
======================================

Trains the full model next to two ablations on the fine-grained synthetic
task: without the first (low-layer) interaction stage, and without the
first-stage term in the fusion. Takes a few minutes; lower `SEEDS` for a
quicker look.
"""

import os
import tempfile

from czsl_stagewise.workbench import experiments as ex
from czsl_stagewise.workbench.config import ExperimentConfig

SEEDS = [0, 1, 2]

root = os.environ.get("CZSL_RUNS") or tempfile.mkdtemp(prefix="czsl-runs-")
report = ex.run_ablation(ExperimentConfig(), ["full", "ms_a", "df"], SEEDS, root=root)
print(ex.format_table(report.table(), "variant"))
print("runs stored under", root)

# ## Window size
#
# Same task, aggregating the first n and last n encoder blocks.

sweep = ex.run_layer_sweep(ExperimentConfig(), [1, 2, 3, 4], seeds=[0], root=root)
for row in sweep.rows:
    print("n=%d  AUC %.3f" % (row["n"], row["AUC"]))
