"""
Class memory and pseudo-exemplars
=================================

A store keeps one quantized mixture per class. Replay batches mix real rows of
the current task with rows generated from the store.
"""

import numpy as np

from gbmem.bmm import EmConfig
from gbmem.harness import SynthSpec, synth_dataset
from gbmem.memory import GbmStore, LatentReplayBuffer, compose_batch, memory_bits_lr
from gbmem.datasets import split_by_class
from gbmem.rng import SeededRng

train, test, protos = synth_dataset(SynthSpec(n_classes=6, d=128), SeededRng(0))
per_class = split_by_class(train)

store = GbmStore(d=128, k=2, q=8)
for c in sorted(per_class):
    store = store.update(c, per_class[c], EmConfig(k=2), SeededRng(1).child(c))
print("classes:", store.class_ids, "memory:", store.memory_bits(), "bits")

###############################################################################
# The same budget spent on stored real rows buys E = K*q exemplars per class.

buffer = LatentReplayBuffer(e=16, d=128)
for c in sorted(per_class):
    buffer = buffer.update(c, per_class[c], None, SeededRng(2).child(c))
print("latent replay:", buffer.memory_bits(), "bits =", memory_bits_lr(16, 128, 6))

###############################################################################
# Generated rows are close to the class prototypes they came from.

bits, labels = store.generate(600, SeededRng(3))
fake = bits.to_array()
for c in range(3):
    real_mean = per_class[c].to_array().mean(0)
    print(f"class {c}: {np.sum(labels == c)} rows, mean gap "
          f"{np.abs(fake[labels == c].mean(0) - real_mean).mean():.3f}")

###############################################################################
# Batch composition: how many real and replayed rows end up in a batch.

for n_new in (2, 5, 10):
    print(f"b=128, {n_new} new vs 50 old classes ->", compose_batch(128, n_new, 50))
