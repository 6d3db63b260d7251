"""Labeled embedding sets and the GBM1 embedding file format.

File layout (little-endian)::

    b"GBM1"  u8 kind (0 = bit-packed, 1 = float64)  u32 N  u32 D
    N x u32 labels
    payload: N rows of ceil(D / 8) packed bytes, or N x D float64
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .bitmatrix import BitMatrix
from .errors import (
    DimensionMismatchError,
    MalformedHeaderError,
    ShapeError,
    TruncatedPayloadError,
)

MAGIC = b"GBM1"
KIND_BITS = 0
KIND_REAL = 1
_HEADER = struct.Struct("<4sBII")


@dataclass(frozen=True, eq=False)
class LabeledEmbeddings:
    """Embeddings (BitMatrix or float matrix) with one class id per row."""

    data: object
    labels: np.ndarray

    def __post_init__(self):
        data = self.data
        if not isinstance(data, BitMatrix):
            data = np.array(data, dtype=np.float64)
            if data.ndim != 2:
                raise ShapeError(f"real embeddings must be 2-D, got shape {data.shape}")
            if not np.all(np.isfinite(data)):
                raise ValueError("real embeddings must be finite")
            data.flags.writeable = False
            object.__setattr__(self, "data", data)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != data.shape[0]:
            raise ShapeError(f"{labels.shape[0]} labels for {data.shape[0]} rows")
        if labels.size and labels.min() < 0:
            raise ValueError("class ids must be non-negative")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def is_binary(self) -> bool:
        return isinstance(self.data, BitMatrix)

    @property
    def n_rows(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def dense(self) -> np.ndarray:
        """Data as a dense array (uint8 bits or float64 values)."""
        return self.data.to_array() if self.is_binary else self.data

    def subset(self, index) -> "LabeledEmbeddings":
        index = np.asarray(index)
        if self.is_binary:
            data = self.data.rows(index)
        else:
            data = self.data[index]
        return LabeledEmbeddings(data, self.labels[index])

    def select_classes(self, class_ids) -> "LabeledEmbeddings":
        return self.subset(np.flatnonzero(np.isin(self.labels, list(class_ids))))

    def __eq__(self, other):
        if not isinstance(other, LabeledEmbeddings) or self.is_binary != other.is_binary:
            return NotImplemented if not isinstance(other, LabeledEmbeddings) else False
        if not np.array_equal(self.labels, other.labels):
            return False
        if self.is_binary:
            return self.data == other.data
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()

    __hash__ = None


def concat(parts) -> LabeledEmbeddings:
    parts = list(parts)
    if parts[0].is_binary:
        from .bitmatrix import vstack

        data = vstack(p.data for p in parts)
    else:
        data = np.concatenate([p.data for p in parts], axis=0)
    return LabeledEmbeddings(data, np.concatenate([p.labels for p in parts]))


def split_by_class(ds: LabeledEmbeddings) -> dict:
    """Map each class id to its rows, keeping the original row order."""
    out = {}
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        out[int(c)] = ds.data.rows(idx) if ds.is_binary else ds.data[idx]
    return out


def encode_embeddings(ds: LabeledEmbeddings) -> bytes:
    n, d = ds.data.shape
    kind = KIND_BITS if ds.is_binary else KIND_REAL
    head = _HEADER.pack(MAGIC, kind, n, d)
    labels = ds.labels.astype("<u4").tobytes()
    if ds.is_binary:
        payload = ds.data.packed.tobytes()
    else:
        payload = np.ascontiguousarray(ds.data, dtype="<f8").tobytes()
    return head + labels + payload


def decode_embeddings(buf: bytes) -> LabeledEmbeddings:
    if len(buf) < _HEADER.size:
        raise MalformedHeaderError(f"file too short for a header ({len(buf)} bytes)")
    magic, kind, n, d = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise MalformedHeaderError(f"bad magic {magic!r}")
    if kind not in (KIND_BITS, KIND_REAL):
        raise MalformedHeaderError(f"unknown payload kind {kind}")
    off = _HEADER.size
    if len(buf) < off + 4 * n:
        raise TruncatedPayloadError(f"label block needs {4 * n} bytes")
    labels = np.frombuffer(buf, dtype="<u4", count=n, offset=off).astype(np.int64)
    off += 4 * n
    row_bytes = (d + 7) // 8 if kind == KIND_BITS else 8 * d
    expected = n * row_bytes
    available = len(buf) - off
    if available < expected:
        raise TruncatedPayloadError(f"payload holds {available} bytes, header implies {expected}")
    if available > expected:
        raise DimensionMismatchError(
            f"payload holds {available} bytes, header implies {expected} for N={n}, D={d}"
        )
    if kind == KIND_BITS:
        packed = np.frombuffer(buf, dtype=np.uint8, count=expected, offset=off).reshape(n, row_bytes)
        tail = d % 8
        if tail and n and np.any(packed[:, -1] >> tail):
            raise DimensionMismatchError(f"bits set beyond column {d} in padded rows")
        data = BitMatrix(packed, d)
    else:
        data = np.frombuffer(buf, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    return LabeledEmbeddings(data, labels)


def save_embeddings(ds: LabeledEmbeddings, path) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(encode_embeddings(ds))


def load_embeddings(path) -> LabeledEmbeddings:
    with open(os.fspath(path), "rb") as fh:
        return decode_embeddings(fh.read())
