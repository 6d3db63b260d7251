"""Real-to-binary embedding converters.

Two routes are provided: a thermometer code over range-calibrated features,
and a learned linear projection followed by a Heaviside step, trained with a
straight-through (hard-tanh) gradient.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .bitmatrix import BitMatrix, as_bits
from .classifier import LinearClassifier, TrainConfig, cross_entropy
from .errors import DivergenceError, EmptyInputError, ParameterError, ShapeError
from .rng import as_generator

# absorbs float error in z * p when z is an exact multiple of 1/p
_LEVEL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RangeCalibration:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=np.float64).reshape(-1)
        hi = np.array(self.hi, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise ShapeError("lo and hi must have the same length")
        if np.any(~(lo < hi)):
            raise ValueError("every feature needs lo < hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def d(self) -> int:
        return self.lo.shape[0]

    def normalize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ShapeError(f"expected {self.d} features, got shape {x.shape}")
        return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)


def calibrate_range(features) -> RangeCalibration:
    """Per-feature 1st/99th percentile bounds.

    ``lo`` uses the lower and ``hi`` the higher order statistic, so the range
    never shrinks below what the data spans at those ranks. Zero-spread
    columns get ``(v, v + 1)``.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInputError("range calibration needs a non-empty 2-D feature matrix")
    if x.shape[0] < 2:
        raise EmptyInputError("range calibration needs at least two rows")
    lo = np.percentile(x, 1, axis=0, method="lower")
    hi = np.percentile(x, 99, axis=0, method="higher")
    flat = ~(hi > lo)
    hi = np.where(flat, lo + 1.0, hi)
    return RangeCalibration(lo, hi)


def therm_levels(z, p: int) -> np.ndarray:
    """Quantization level min(floor(z * p), p) of normalized values."""
    return np.minimum(np.floor(np.asarray(z) * p + _LEVEL_TOL), p).astype(np.int64)


def therm_encode(x, cal: RangeCalibration | None, p: int) -> BitMatrix:
    """Thermometer code: per feature, the first ``level`` of ``p`` bits set.

    With ``cal=None`` the input is taken as already normalized and clipped to
    [0, 1].
    """
    if p < 1:
        raise ParameterError("p must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D feature matrix, got shape {x.shape}")
    z = np.clip(x, 0.0, 1.0) if cal is None else cal.normalize(x)
    v = therm_levels(z, p)
    bits = np.arange(p) < v[:, :, None]
    return BitMatrix.from_array(bits.reshape(x.shape[0], x.shape[1] * p))


def therm_decode(bits, p: int) -> np.ndarray:
    """Average every p-bit segment; accepts arbitrary bit patterns."""
    arr = as_bits(bits)
    if p < 1 or arr.shape[1] % p:
        raise ShapeError(f"width {arr.shape[1]} is not a multiple of p={p}")
    return arr.reshape(arr.shape[0], -1, p).mean(axis=2, dtype=np.float64)


@dataclass(frozen=True)
class ThermometerCodec:
    """Bundles p with a range calibration; serializes to a JSON sidecar."""

    p: int
    cal: RangeCalibration

    @property
    def d(self) -> int:
        return self.cal.d

    @property
    def width(self) -> int:
        return self.p * self.d

    def encode(self, x) -> BitMatrix:
        return therm_encode(x, self.cal, self.p)

    def decode(self, bits) -> np.ndarray:
        return therm_decode(bits, self.p)

    def to_dict(self) -> dict:
        return {"kind": "thermometer", "p": self.p, "lo": self.cal.lo.tolist(), "hi": self.cal.hi.tolist()}

    @classmethod
    def from_dict(cls, rec) -> "ThermometerCodec":
        if rec.get("kind") != "thermometer":
            raise ParameterError("sidecar does not describe a thermometer codec")
        return cls(int(rec["p"]), RangeCalibration(rec["lo"], rec["hi"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ThermometerCodec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- Heaviside projection --------------------------------------------------


@dataclass(frozen=True, eq=False)
class HeavisideProjection:
    """Linear map to ``f * d`` units followed by a step at zero."""

    w: np.ndarray
    f: int
    ste_clip: float = 1.0

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64, ndmin=2)
        if w.shape[0] != self.f * w.shape[1]:
            raise ShapeError(f"weight shape {w.shape} is not (f*d, d) for f={self.f}")
        if not np.all(np.isfinite(w)):
            raise ValueError("projection weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @property
    def d(self) -> int:
        return self.w.shape[1]

    @property
    def width(self) -> int:
        return self.w.shape[0]

    def to_dict(self) -> dict:
        return {"kind": "heaviside", "f": self.f, "ste_clip": self.ste_clip, "w": self.w.tolist()}

    @classmethod
    def from_dict(cls, rec) -> "HeavisideProjection":
        return cls(np.asarray(rec["w"]), int(rec["f"]), float(rec.get("ste_clip", 1.0)))


def init_projection(d: int, f: int, rng, scale: float = 1.0, ste_clip: float = 1.0) -> HeavisideProjection:
    """Gaussian weights with std ``1 / (scale * sqrt(d))``.

    Passing the typical feature magnitude as ``scale`` puts the
    pre-activations near unit variance, inside the straight-through window.
    """
    gen = as_generator(rng)
    w = gen.standard_normal((f * d, d)) / (scale * math.sqrt(d))
    return HeavisideProjection(w, f, ste_clip)


def _pre(x, proj):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != proj.d:
        raise ShapeError(f"expected {proj.d} features, got shape {x.shape}")
    return x, x @ proj.w.T


def heaviside_forward(x, proj: HeavisideProjection) -> BitMatrix:
    """Bits ``u >= 0`` of the projection ``u = x w^T``."""
    _, u = _pre(x, proj)
    return BitMatrix.from_array(u >= 0)


def heaviside_backward(upstream_grad, x, proj: HeavisideProjection):
    """Straight-through gradients of the projection.

    The step is replaced by the identity where ``|u| <= ste_clip`` and by
    zero elsewhere. Returns ``(grad_x, grad_w)``.
    """
    x, u = _pre(x, proj)
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != u.shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != output shape {u.shape}")
    g_u = g * (np.abs(u) <= proj.ste_clip)
    return g_u @ proj.w, g_u.T @ x


def train_heaviside(features, labels, proj: HeavisideProjection, classifier: LinearClassifier,
                    train_config: TrainConfig | None = None, rng=None, history=None):
    """Jointly train the projection and a binary-input head by SGD.

    The head sees the bits as -1/+1. ``history``, if given, receives the mean
    loss of each epoch.
    """
    cfg = train_config or TrainConfig()
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInputError("train_heaviside needs a non-empty feature matrix")
    if classifier.d != proj.width:
        raise ShapeError(f"head expects width {classifier.d}, projection gives {proj.width}")
    gen = as_generator(cfg.seed if rng is None else rng)
    y_all = classifier.index_of(labels)
    n = x.shape[0]
    P = proj.w.copy()
    W = classifier.w.copy()
    b = classifier.b.copy()
    vP, vW, vb = np.zeros_like(P), np.zeros_like(W), np.zeros_like(b)
    bs = cfg.batch_size
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = gen.permutation(n)
        total, steps = 0.0, 0
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            xb = x[idx]
            u = xb @ P.T
            xt = np.where(u >= 0, 1.0, -1.0)
            loss, dz = cross_entropy(xt @ W.T + b, y_all[idx])
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            d_xt = dz @ W
            # xt = 2 * step(u) - 1; straight-through on the step
            d_u = 2.0 * d_xt * (np.abs(u) <= proj.ste_clip)
            vW = cfg.momentum * vW + dz.T @ xt
            vb = cfg.momentum * vb + dz.sum(axis=0)
            vP = cfg.momentum * vP + d_u.T @ xb
            W -= lr * vW
            b -= lr * vb
            P -= lr * vP
            total += loss
            steps += 1
        if history is not None:
            history.append(total / steps)
    new_proj = HeavisideProjection(P, proj.f, proj.ste_clip)
    new_head = LinearClassifier(W, b, classifier.class_ids, classifier.input_kind)
    return new_proj, new_head
