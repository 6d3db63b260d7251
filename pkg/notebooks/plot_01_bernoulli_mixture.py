"""
Fitting a Bernoulli mixture to binary vectors
=============================================

We plant a two-component mixture over 64-bit vectors, fit it with EM and
compare the recovered prototypes to the truth.
"""

import numpy as np

from gbmem import bmm
from gbmem.bitmatrix import BitMatrix
from gbmem.rng import SeededRng

gen = np.random.default_rng(0)
mu_true = np.where(gen.random((2, 64)) < 0.5, 0.1, 0.9)
comp = np.repeat([0, 1], 1000)
bits = BitMatrix.from_array(gen.random((2000, 64)) < mu_true[comp])
print(bits.shape, "packed into", bits.packed.nbytes, "bytes")

###############################################################################
# Fit. Several short warm-up runs are made and the best is continued until the
# relative change of the log-likelihood drops below ``eps``.

params, report = bmm.fit(bits, bmm.EmConfig(k=2), SeededRng(1))
perm = bmm.align_components(params.mu, mu_true)
print("EM steps:", report.iterations, "converged:", report.converged)
print("log-likelihood trace:", np.round(report.ll_trace, 2))
print("max |mu - mu_true|:", np.abs(params.mu[perm] - mu_true).max())
print("pi:", params.pi[perm])

###############################################################################
# Quantize the prototypes to a few bits and look at the worst error.

for q in (1, 2, 4, 8):
    back = bmm.dequantize(bmm.quantize(params, q))
    print(f"q={q}: max error {np.abs(back.mu - params.mu).max():.4f}, "
          f"{bmm.model_nbytes(2, 64, q)} bytes on disk")

###############################################################################
# Samples drawn from the fit have the same per-bit frequencies.

fake = bmm.sample(params, 2000, SeededRng(2))
print("max column-mean gap:", np.abs(fake.to_array().mean(0) - bits.to_array().mean(0)).max())
