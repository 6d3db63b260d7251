"""
Accuracy against memory budget
==============================

Sweep the number of stored exemplars for latent replay and the number of
components for the generative memory, holding data and seeds fixed.
"""

from gbmem.harness import RunConfig, load_data, sweep_memory
from gbmem.memory import MemoryRow

config = RunConfig(q=8)
data = load_data(config)
rows = sweep_memory(config, {"lr_E": [8, 16, 32]}, data) + sweep_memory(config, {"gbm_K": [1, 2, 4]}, data)
for method, value, bits, acc in sorted(rows, key=lambda r: (r[2], r[0])):
    print(f"{method:4s} {value:3d}  {bits:7d} bits  avg acc {acc:.4f}")

###############################################################################
# Very coarse prototypes lose accuracy.

for _, q, bits, acc in sweep_memory(config.replace(k=1), {"gbm_q": [1, 2, 8]}, data):
    print(f"q={q}: {bits} bits, avg acc {acc:.4f}")

###############################################################################
# Memory for a larger deployment: 12544-dimensional codes, ten classes.

for row in (MemoryRow("gbm", 1, 32, 12544, 10), MemoryRow("lr", 75, 1, 12544, 10)):
    print(row.method, row.k_or_e, row.bits, f"{row.bits / 1e6:.1f} Mb")
