"""Generative binary memory and the latent-replay baseline buffer."""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import bmm
from .bitmatrix import BitMatrix, as_bits, vstack
from .errors import (
    DegenerateInputError,
    DuplicateClassError,
    EmptyMemoryError,
    MalformedHeaderError,
    ParameterError,
    ShapeError,
    TruncatedPayloadError,
)
from .rng import as_generator

WEIGHTINGS = ("uniform", "by_count")


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    model: bmm.QuantizedBmm
    n_train: int

    def params(self) -> bmm.BmmParams:
        return bmm.dequantize(self.model)


@dataclass(frozen=True)
class GbmStore:
    """Append-only per-class prototype memory.

    ``update`` returns a new store; entries of the old store are shared, never
    modified.
    """

    d: int
    k: int = 1
    q: int = 32
    class_weighting: str = "uniform"
    entries: tuple = ()

    def __post_init__(self):
        if self.class_weighting not in WEIGHTINGS:
            raise ParameterError(f"class_weighting must be one of {WEIGHTINGS}")
        bmm._check_q(self.q)

    @property
    def class_ids(self) -> list:
        return [e.class_id for e in self.entries]

    @property
    def n_classes(self) -> int:
        return len(self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, class_id):
        return any(e.class_id == class_id for e in self.entries)

    def update(self, class_id: int, Z, em_config: bmm.EmConfig | None = None, rng=None) -> "GbmStore":
        return update(self, class_id, Z, em_config, rng)

    def generate(self, n: int, rng):
        return generate(self, n, rng)

    def generate_dense(self, n: int, rng):
        return generate_dense(self, n, as_generator(rng))

    def class_weights(self) -> np.ndarray:
        if self.class_weighting == "uniform":
            return np.full(len(self.entries), 1.0 / len(self.entries))
        counts = np.array([e.n_train for e in self.entries], dtype=np.float64)
        return counts / counts.sum()

    def memory_bits(self) -> int:
        return memory_bits_gbm(self.k, self.d, self.n_classes, self.q)


def update(store: GbmStore, class_id: int, Z, em_config=None, rng=None) -> GbmStore:
    """Fit a BMM on one new class and append it, quantized, to the store."""
    class_id = int(class_id)
    if class_id in store:
        raise DuplicateClassError(f"class {class_id} already in memory")
    bits = as_bits(Z)
    if bits.shape[1] != store.d:
        raise ShapeError(f"class data has D={bits.shape[1]}, store expects {store.d}")
    em_config = em_config or bmm.EmConfig(k=store.k)
    if em_config.k != store.k:
        raise ParameterError(f"EM config fits K={em_config.k}, store holds K={store.k}")
    if bits.shape[0] < em_config.k:
        raise DegenerateInputError(f"class {class_id}: {bits.shape[0]} samples for K={em_config.k}")
    params, _ = bmm.fit(bits, em_config, rng)
    entry = ClassEntry(class_id, bmm.quantize(params, store.q), bits.shape[0])
    return GbmStore(store.d, store.k, store.q, store.class_weighting, store.entries + (entry,))


def _sampler(store):
    """Flattened component table: stacked mu, owning entry, cumulative weights.

    Picking a class and then a prototype within it is the same as picking a
    prototype from the joint table with weight w_class * pi_k.
    """
    cached = store.__dict__.get("_sampler_cache")
    if cached is None:
        params = [e.params() for e in store.entries]
        mu = np.concatenate([p.mu for p in params])
        owner = np.concatenate([np.full(p.k, i) for i, p in enumerate(params)])
        joint = np.concatenate([w * p.pi for w, p in zip(store.class_weights(), params)])
        cached = (mu, owner, np.cumsum(joint))
        object.__setattr__(store, "_sampler_cache", cached)
    return cached


def generate_dense(store: GbmStore, n: int, gen):
    """As :func:`generate`, returning a dense uint8 array instead of a BitMatrix."""
    if n == 0:
        return np.zeros((0, store.d), dtype=np.uint8), np.zeros(0, dtype=np.int64)
    if not store.entries:
        raise EmptyMemoryError("cannot generate from an empty memory")
    mu, owner, cdf = _sampler(store)
    comp = np.minimum(np.searchsorted(cdf, gen.random(n) * cdf[-1], side="right"), len(cdf) - 1)
    bits = (gen.random((n, store.d)) < mu[comp]).astype(np.uint8)
    labels = np.array(store.class_ids, dtype=np.int64)[owner[comp]]
    return bits, labels


def generate(store: GbmStore, n: int, rng):
    """Sample ``n`` labeled pseudo-exemplars from the stored class models.

    Each row picks a class (uniformly or in proportion to its training count,
    per ``store.class_weighting``), then a prototype of that class by its
    mixing coefficient, then independent Bernoulli bits.
    """
    if n < 0:
        raise ParameterError("n must be non-negative")
    bits, labels = generate_dense(store, n, as_generator(rng))
    return BitMatrix.from_array(bits), labels


def compose_batch(b: int, n_new: int, n_old: int) -> tuple[int, int]:
    """Split a batch of ``b`` rows between new samples and pseudo-exemplars.

    The split is proportional to class counts so every seen class gets the
    same expected share. ``N_new`` is rounded half away from zero and kept at
    least one.
    """
    if b < 1 or n_new < 1 or n_old < 0:
        raise ParameterError("need b >= 1, n_new >= 1, n_old >= 0")
    n_real = min(b, max(1, math.floor(b * n_new / (n_new + n_old) + 0.5)))
    return n_real, b - n_real


def memory_bits_gbm(k: int, d: int, n_c: int, q: int) -> int:
    """Prototype payload: K x D x n_c x q bits."""
    return int(k) * int(d) * int(n_c) * int(q)


def memory_bits_lr(e: int, d: int, n_c: int) -> int:
    """Binary latent exemplar payload: E x D x n_c bits."""
    return int(e) * int(d) * int(n_c)


def megabits(bits: int) -> float:
    return bits / 1e6


# -- latent replay ---------------------------------------------------------


@dataclass(frozen=True)
class LatentReplayBuffer:
    """Stores up to ``e`` real binary embeddings for each past class."""

    e: int
    d: int
    stored: tuple = ()  # of (class_id, BitMatrix, n_train)

    @property
    def class_ids(self) -> list:
        return [c for c, _, _ in self.stored]

    @property
    def n_classes(self) -> int:
        return len(self.stored)

    def __len__(self):
        return len(self.stored)

    def __contains__(self, class_id):
        return class_id in self.class_ids

    def rows_for(self, class_id) -> BitMatrix:
        for c, rows, _ in self.stored:
            if c == class_id:
                return rows
        raise KeyError(class_id)

    def update(self, class_id, Z, em_config=None, rng=None):
        return lr_store(self, class_id, Z, rng)

    def generate(self, n, rng):
        return lr_replay(self, n, rng)

    def generate_dense(self, n, rng):
        return lr_replay_dense(self, n, as_generator(rng))

    def memory_bits(self) -> int:
        return memory_bits_lr(self.e, self.d, self.n_classes)


def lr_store(buffer: LatentReplayBuffer, class_id: int, Z, rng) -> LatentReplayBuffer:
    """Keep ``min(E, N)`` rows of ``Z``, chosen uniformly without replacement."""
    class_id = int(class_id)
    if class_id in buffer:
        raise DuplicateClassError(f"class {class_id} already in buffer")
    mat = Z if isinstance(Z, BitMatrix) else BitMatrix.from_array(as_bits(Z))
    if mat.n_cols != buffer.d:
        raise ShapeError(f"class data has D={mat.n_cols}, buffer expects {buffer.d}")
    n = mat.n_rows
    if n > buffer.e:
        keep = np.sort(as_generator(rng).choice(n, size=buffer.e, replace=False))
        mat = mat.rows(keep)
    return LatentReplayBuffer(buffer.e, buffer.d, buffer.stored + ((class_id, mat, n),))


def lr_replay_dense(buffer: LatentReplayBuffer, n: int, gen):
    if n == 0:
        return np.zeros((0, buffer.d), dtype=np.uint8), np.zeros(0, dtype=np.int64)
    if not buffer.stored:
        raise EmptyMemoryError("cannot replay from an empty buffer")
    dense = buffer.__dict__.get("_dense_cache")
    if dense is None:
        dense = [rows.to_array() for _, rows, _ in buffer.stored]
        object.__setattr__(buffer, "_dense_cache", dense)
    which = gen.integers(0, len(dense), size=n)
    out = np.zeros((n, buffer.d), dtype=np.uint8)
    for idx, rows in enumerate(dense):
        sel = np.flatnonzero(which == idx)
        if sel.size:
            out[sel] = rows[gen.integers(0, rows.shape[0], size=sel.size)]
    return out, np.array(buffer.class_ids, dtype=np.int64)[which]


def lr_replay(buffer: LatentReplayBuffer, n: int, rng):
    """Draw ``n`` stored rows: class uniformly, then a row with replacement."""
    bits, labels = lr_replay_dense(buffer, n, as_generator(rng))
    return BitMatrix.from_array(bits), labels


# -- serialization ---------------------------------------------------------

STORE_MAGIC = b"GBMS"
_STORE_HEAD = struct.Struct("<4sIIIBB")
_ENTRY_HEAD = struct.Struct("<II")


def encode_entry(entry: ClassEntry) -> bytes:
    return _ENTRY_HEAD.pack(entry.class_id, entry.n_train) + bmm.encode_model(entry.model)


def encode_store(store: GbmStore) -> bytes:
    """Store header, then one (class_id, n_train, model record) per entry."""
    head = _STORE_HEAD.pack(
        STORE_MAGIC, len(store.entries), store.d, store.k, store.q, WEIGHTINGS.index(store.class_weighting)
    )
    return head + b"".join(encode_entry(e) for e in store.entries)


def decode_store(buf: bytes) -> GbmStore:
    if len(buf) < _STORE_HEAD.size:
        raise MalformedHeaderError("store file too short for a header")
    magic, count, d, k, q, w = _STORE_HEAD.unpack_from(buf, 0)
    if magic != STORE_MAGIC or w >= len(WEIGHTINGS):
        raise MalformedHeaderError("not a GBM store file")
    off = _STORE_HEAD.size
    entries = []
    for _ in range(count):
        if len(buf) - off < _ENTRY_HEAD.size:
            raise TruncatedPayloadError("store ends inside an entry header")
        cid, n_train = _ENTRY_HEAD.unpack_from(buf, off)
        model, off = bmm.decode_model(buf, off + _ENTRY_HEAD.size)
        if model.d != d:
            raise MalformedHeaderError(f"entry for class {cid} has D={model.d}, store has {d}")
        entries.append(ClassEntry(int(cid), model, int(n_train)))
    if off != len(buf):
        raise MalformedHeaderError(f"{len(buf) - off} trailing bytes in store file")
    return GbmStore(d, k, q, WEIGHTINGS[w], tuple(entries))


def save_store(store: GbmStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_store(store))


def load_store(path) -> GbmStore:
    with open(path, "rb") as fh:
        return decode_store(fh.read())


MEMORY_REPORT_COLUMNS = ("method", "K_or_E", "q", "D", "n_classes", "bits", "Mb")


@dataclass
class MemoryRow:
    method: str
    k_or_e: int
    q: int
    d: int
    n_classes: int
    bits: int = field(init=False)

    def __post_init__(self):
        if self.method == "gbm":
            self.bits = memory_bits_gbm(self.k_or_e, self.d, self.n_classes, self.q)
        elif self.method == "lr":
            self.bits = memory_bits_lr(self.k_or_e, self.d, self.n_classes)
        else:
            raise ParameterError(f"unknown memory method {self.method!r}")


def memory_report_csv(rows) -> str:
    """CSV with one line per configuration; Mb = 10^6 bits, one decimal."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MEMORY_REPORT_COLUMNS)
    for r in rows:
        writer.writerow([r.method, r.k_or_e, r.q, r.d, r.n_classes, r.bits, f"{megabits(r.bits):.1f}"])
    return buf.getvalue()
