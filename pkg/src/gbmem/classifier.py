"""Linear softmax head trained with SGD + momentum on replay-mixed batches."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .bitmatrix import BitMatrix
from .errors import (
    DivergenceError,
    DuplicateClassError,
    EmptyInputError,
    MalformedHeaderError,
    ParameterError,
    ShapeError,
    TruncatedPayloadError,
)
from .memory import compose_batch
from .rng import as_generator

INPUT_KINDS = ("binary", "real")


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    """Weights ``w`` (n_classes x d), biases ``b``; rows sorted by class id."""

    w: np.ndarray
    b: np.ndarray
    class_ids: tuple
    input_kind: str = "binary"

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64, ndmin=2)
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        ids = tuple(int(c) for c in self.class_ids)
        if w.shape[0] != b.shape[0] or w.shape[0] != len(ids):
            raise ShapeError("weights, biases and class ids disagree on the class count")
        if list(ids) != sorted(set(ids)):
            raise ValueError("class ids must be unique and sorted")
        if self.input_kind not in INPUT_KINDS:
            raise ParameterError(f"input_kind must be one of {INPUT_KINDS}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("classifier parameters must be finite")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "class_ids", ids)

    @classmethod
    def zeros(cls, class_ids, d: int, input_kind: str = "binary") -> "LinearClassifier":
        ids = sorted(int(c) for c in class_ids)
        return cls(np.zeros((len(ids), d)), np.zeros(len(ids)), tuple(ids), input_kind)

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    @property
    def d(self) -> int:
        return self.w.shape[1]

    def index_of(self, labels) -> np.ndarray:
        """Row index of each class id in ``labels``."""
        ids = np.asarray(self.class_ids)
        labels = np.asarray(labels, dtype=np.int64)
        pos = np.searchsorted(ids, labels)
        pos = np.minimum(pos, len(ids) - 1) if len(ids) else pos
        if labels.size and (len(ids) == 0 or np.any(ids[pos] != labels)):
            missing = sorted(set(labels.tolist()) - set(ids.tolist()))
            raise KeyError(f"classes {missing} have no output row")
        return pos


def prepare_input(clf: LinearClassifier, x, feature_map=None) -> np.ndarray:
    """Turn stored rows into classifier input.

    ``feature_map`` (e.g. thermometer decoding) takes precedence. Otherwise
    binary rows become -1/+1 for a binary head and plain floats for a real
    head.
    """
    return _prepare(clf.input_kind, x, feature_map)


def _affine(clf, xt):
    if xt.ndim != 2 or xt.shape[1] != clf.d:
        raise ShapeError(f"input width {xt.shape[-1]} does not match classifier width {clf.d}")
    return xt @ clf.w.T + clf.b


def logits(clf: LinearClassifier, x, feature_map=None) -> np.ndarray:
    return _affine(clf, prepare_input(clf, x, feature_map))


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(z, y_idx):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    n = z.shape[0]
    loss = -log_p[np.arange(n), y_idx].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), y_idx] -= 1.0
    return float(loss), grad / n


def loss_and_grad(clf: LinearClassifier, xt, y_idx):
    """Loss and (dW, db) for prepared inputs ``xt``."""
    loss, dz = cross_entropy(_affine(clf, xt), y_idx)
    return loss, dz.T @ xt, dz.sum(axis=0)


def extend_outputs(clf: LinearClassifier, new_class_ids) -> LinearClassifier:
    """Add zero-initialised rows for new classes, keeping rows sorted."""
    new = [int(c) for c in new_class_ids]
    if len(set(new)) != len(new) or set(new) & set(clf.class_ids):
        raise DuplicateClassError(f"classes {sorted(set(new) & set(clf.class_ids)) or new} already present")
    if not new:
        return clf
    ids = sorted(clf.class_ids + tuple(new))
    w = np.zeros((len(ids), clf.d))
    b = np.zeros(len(ids))
    old = [ids.index(c) for c in clf.class_ids]
    w[old] = clf.w
    b[old] = clf.b
    return LinearClassifier(w, b, tuple(ids), clf.input_kind)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 128
    lr_decay: float = 0.1
    decay_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must lie in [0, 1)")
        if self.batch_size < 2:
            raise ParameterError("batch_size must be at least 2")
        if self.epochs < 0 or self.decay_every < 1:
            raise ParameterError("epochs must be >= 0 and decay_every >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay ** (epoch // self.decay_every)


def _stack_rows(real, fake):
    if fake is None:
        return real
    if isinstance(real, BitMatrix):
        real = real.to_array()
    if isinstance(fake, BitMatrix):
        fake = fake.to_array()
    return np.concatenate([np.asarray(real), np.asarray(fake)], axis=0)


def train_task(clf: LinearClassifier, new_data, memory=None, cfg: TrainConfig | None = None, rng=None,
               feature_map=None):
    """Retrain the head on new-class samples mixed with replayed old classes.

    Each step takes ``N_new`` shuffled real rows and ``N_old`` rows from
    ``memory.generate`` (a GbmStore or LatentReplayBuffer), split by
    :func:`compose_batch`. With no memory, batches are all real.

    Returns
    -------
    clf : LinearClassifier
    losses : list of float
        Mean training loss of every epoch.
    """
    cfg = cfg or TrainConfig()
    gen = as_generator(cfg.seed if rng is None else rng)
    n = new_data.n_rows
    if n == 0:
        raise EmptyInputError("no training samples for this task")
    y_all = clf.index_of(new_data.labels)
    n_old = memory.n_classes if memory is not None else 0
    n_new_cls = len(np.unique(new_data.labels))
    n_real, n_fake = compose_batch(cfg.batch_size, n_new_cls, n_old)
    if n_fake:
        clf.index_of(memory.class_ids)
    x_all = new_data.dense()

    w = clf.w.copy()
    b = clf.b.copy()
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    losses = []
    steps = math.ceil(n / n_real)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = gen.permutation(n)
        total = 0.0
        for s in range(steps):
            idx = order[s * n_real:(s + 1) * n_real]
            real = x_all[idx]
            y = y_all[idx]
            fake = None
            if n_fake:
                fake, fake_labels = memory.generate_dense(n_fake, gen)
                y = np.concatenate([y, clf.index_of(fake_labels)])
            xt = _prepare(clf.input_kind, _stack_rows(real, fake) if fake is not None else real, feature_map)
            z = xt @ w.T + b
            loss, dz = cross_entropy(z, y)
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            vw = cfg.momentum * vw + dz.T @ xt
            vb = cfg.momentum * vb + dz.sum(axis=0)
            w -= lr * vw
            b -= lr * vb
            total += loss
        losses.append(total / steps)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DivergenceError(epoch)
    return LinearClassifier(w, b, clf.class_ids, clf.input_kind), losses


def _prepare(input_kind, x, feature_map):
    if feature_map is not None:
        return np.asarray(feature_map(x), dtype=np.float64)
    if isinstance(x, BitMatrix):
        x = x.to_array()
    x = np.asarray(x)
    if input_kind == "binary":
        return 2.0 * x.astype(np.float64) - 1.0
    return x.astype(np.float64, copy=False)


def predict(clf: LinearClassifier, x, feature_map=None) -> np.ndarray:
    """Predicted class ids; ties go to the smallest class id."""
    z = logits(clf, x, feature_map)
    return np.asarray(clf.class_ids, dtype=np.int64)[np.argmax(z, axis=1)]


def evaluate(clf: LinearClassifier, data, feature_map=None) -> float:
    """Fraction of rows whose top logit is the true class."""
    if data.n_rows == 0:
        raise EmptyInputError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(clf, data.data, feature_map) == data.labels))


# -- checkpoint ------------------------------------------------------------

_CKPT_HEAD = struct.Struct("<IIB")


def encode_classifier(clf: LinearClassifier) -> bytes:
    """n_classes, d, kind flag, W, b, then the class ids (u32 each)."""
    return (
        _CKPT_HEAD.pack(clf.n_classes, clf.d, INPUT_KINDS.index(clf.input_kind))
        + np.ascontiguousarray(clf.w, dtype="<f8").tobytes()
        + np.asarray(clf.b, dtype="<f8").tobytes()
        + np.asarray(clf.class_ids, dtype="<u4").tobytes()
    )


def decode_classifier(buf: bytes) -> LinearClassifier:
    if len(buf) < _CKPT_HEAD.size:
        raise MalformedHeaderError("checkpoint too short")
    c, d, kind = _CKPT_HEAD.unpack_from(buf, 0)
    if kind >= len(INPUT_KINDS):
        raise MalformedHeaderError(f"unknown input kind flag {kind}")
    need = _CKPT_HEAD.size + 8 * c * d + 8 * c + 4 * c
    if len(buf) < need:
        raise TruncatedPayloadError(f"checkpoint needs {need} bytes, has {len(buf)}")
    off = _CKPT_HEAD.size
    w = np.frombuffer(buf, "<f8", c * d, off).reshape(c, d)
    off += 8 * c * d
    b = np.frombuffer(buf, "<f8", c, off)
    ids = np.frombuffer(buf, "<u4", c, off + 8 * c)
    return LinearClassifier(w, b, tuple(ids.tolist()), INPUT_KINDS[kind])
