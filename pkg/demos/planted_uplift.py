"""Which descriptor family carries a planted signal?

A cohort is generated where the number of children only changes how often
people travel with companions. Nested feature sets are then trained with the
multitask network; the children AUROC should stay at chance until the
co-travel family is added.

Takes about a minute on one core.
"""

import sys
import tempfile

from mobinfer.experiments import (
    ExperimentConfig, SplitPlan, load_experiment_data, make_split, run_uplift,
)
from mobinfer.ingest import TASKS
from mobinfer.mtl import TrainConfig
from mobinfer.synth import CohortSpec, write_cohort

households = int(sys.argv[1]) if len(sys.argv) > 1 else 1500

spec = CohortSpec(n_households=households, seed=7,
                  effects={"children": {"p_companion": 1.0, "p_hh_companion": 1.0}})
with tempfile.TemporaryDirectory() as tmp:
    write_cohort(spec, tmp)
    ds, report = load_experiment_data(tmp)
print(f"{len(ds)} persons, {report.retained} trips")

split = make_split(ds, SplitPlan("overall", seed=7))
print("train/val/test persons:", split.sizes())
cfg = ExperimentConfig(seed=7, train=TrainConfig(learning_rate=1e-3, batch_size=128),
                       feature_sets=("C", "M", "CT"))
res = run_uplift(ds, split, cfg)

print("\nmacro AUROC, mean over folds")
print("%-9s" % "task" + "".join("%9s" % s for s in ("C", "+M", "+CT")))
for t in TASKS:
    print("%-9s" % t + "".join("%9.3f" % res.value(t, s, "MT", "auroc") for s in ("C", "+M", "+CT")))
