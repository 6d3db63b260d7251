"""
A class-incremental run
=======================

Twenty planted classes arrive as ten initial classes plus five tasks of two.
We compare replay from the generative memory with the two baselines.
"""

from gbmem.harness import RunConfig, load_data, run

config = RunConfig()
data = load_data(config)
reports = {m: run(config.replace(method=m), data) for m in ("finetune", "gbm", "joint")}

for name, rep in reports.items():
    print(f"{name:8s} avg {rep.avg_incremental_accuracy:.4f}  final {rep.final_accuracy:.4f}  "
          f"memory {rep.memory_bits} bits")

###############################################################################
# Without replay the initial classes are forgotten after the first new task.

for name in ("finetune", "gbm"):
    print(name, [None if v is None else round(v, 3) for v in reports[name].group_curves["init"]])

###############################################################################
# The full report is a CSV keyed by task and split.

print(reports["gbm"].to_csv()[:300])
