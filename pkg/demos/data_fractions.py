"""Multitask vs single-task networks as training data shrinks.

Labels are made to co-vary through a shared household factor, then the
shared-trunk network and four single-task networks are trained on
classical + spatiotemporal features at decreasing training fractions. Also
prints the reliability table of one task so calibration can be eyeballed.

Takes a couple of minutes on one core.
"""

import tempfile

from mobinfer.experiments import (
    ExperimentConfig, SplitPlan, load_experiment_data, make_split, run_mt_vs_st, run_uplift,
    wall_time_totals,
)
from mobinfer.ingest import TASKS
from mobinfer.synth import CohortSpec, write_cohort

spec = CohortSpec(n_households=1100, seed=8,
                  factor_loadings={"age": -0.8, "income": 0.8, "children": 0.8, "gender": 0.8})
with tempfile.TemporaryDirectory() as tmp:
    write_cohort(spec, tmp)
    ds, _ = load_experiment_data(tmp)
split = make_split(ds, SplitPlan("overall", seed=8))
cfg = ExperimentConfig(seed=8)
fractions = (1.0, 0.1, 0.01)
res = run_mt_vs_st(ds, split, cfg, fractions=fractions)

print("test NLL (MT / ST)")
print("%-9s" % "fraction" + "".join("%16s" % t for t in TASKS))
for f in fractions:
    cells = ["%7.3f /%7.3f" % (res.value(t, repr(f), "MT", "nll"), res.value(t, repr(f), "ST", "nll"))
             for t in TASKS]
    print("%-9s" % f + "".join("%16s" % c for c in cells))

times = wall_time_totals(res)
print("\ntraining seconds (MT vs summed ST)")
for f in fractions:
    print("  %-6s %6.1f %6.1f" % (f, times[(repr(f), "MT")], times[(repr(f), "ST")]))

up = run_uplift(ds, split, ExperimentConfig(seed=8, feature_sets=("CT",), tasks=("age",)))
print("\nreliability, age, +CT (pooled over folds)")
print("%12s %7s %6s %6s" % ("bin", "count", "acc", "conf"))
for lo, hi, n, acc, conf in up.reliability[("age", "+CT")].rows():
    if n:
        print("(%.2f, %.2f] %7d %6.3f %6.3f" % (lo, hi, n, acc, conf))
