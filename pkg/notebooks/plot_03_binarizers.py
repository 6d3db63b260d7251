"""
Binarizing real-valued features
===============================

Thermometer codes map a calibrated value to a run of leading ones; the
Heaviside projection learns a sign code with a straight-through gradient.
"""

import numpy as np

from gbmem.binarizers import (
    ThermometerCodec, calibrate_range, heaviside_forward, init_projection, train_heaviside,
)
from gbmem.classifier import LinearClassifier, TrainConfig, evaluate
from gbmem.datasets import LabeledEmbeddings
from gbmem.rng import SeededRng

gen = np.random.default_rng(0)
x = np.maximum(gen.normal(1.0, 1.0, size=(6, 3)), 0)

codec = ThermometerCodec(4, calibrate_range(x))
codes = codec.encode(x)
print(codes.to_array()[:2])
print("decoded:\n", np.round(codec.decode(codes)[:2], 2))

###############################################################################
# The roundtrip error is bounded by 1/p.

z = np.linspace(0, 1, 1001)[:, None]
for p in (1, 2, 4, 8):
    c = ThermometerCodec(p, calibrate_range(np.array([[0.0], [1.0]])))
    print(f"p={p}: worst error {np.abs(c.decode(c.encode(z)) - z).max():.3f}")

###############################################################################
# Train a 2x expanded sign code together with a linear head on two blobs.

y = np.repeat([0, 1], 200)
feats = gen.normal(size=(2, 8))[y] * 3 + gen.normal(size=(400, 8))
proj = init_projection(8, 2, SeededRng(1), scale=float(np.sqrt(np.mean(feats ** 2))))
head = LinearClassifier.zeros([0, 1], proj.width)
losses = []
proj, head = train_heaviside(feats, y, proj, head, TrainConfig(epochs=30, batch_size=32), SeededRng(2), losses)
print("loss first/last epoch:", round(losses[0], 4), round(losses[-1], 4))
print("accuracy:", evaluate(head, LabeledEmbeddings(heaviside_forward(feats, proj), y)))
