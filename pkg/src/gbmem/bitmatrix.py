"""Row-major, bit-packed binary matrices."""

from __future__ import annotations

import numpy as np

from .errors import EmptyInputError, ShapeError


class BitMatrix:
    """Immutable N x D matrix of bits.

    Rows are packed into bytes, least-significant bit first, each row padded
    to a whole number of bytes. Padding bits are always zero, which makes the
    packed buffer directly usable as the payload of the embedding file format.

    Parameters
    ----------
    packed : ndarray of uint8, shape (n_rows, ceil(n_cols / 8))
    n_cols : int
    """

    __slots__ = ("_packed", "_n_cols")

    def __init__(self, packed: np.ndarray, n_cols: int):
        packed = np.asarray(packed, dtype=np.uint8)
        if packed.ndim != 2:
            raise ShapeError(f"packed buffer must be 2-D, got {packed.ndim}-D")
        n_cols = int(n_cols)
        if n_cols < 0 or packed.shape[1] != (n_cols + 7) // 8:
            raise ShapeError(f"{packed.shape[1]} bytes per row cannot hold {n_cols} columns")
        tail = n_cols % 8
        if tail and packed.shape[0] and np.any(packed[:, -1] >> tail):
            raise ShapeError("padding bits must be zero")
        packed = packed.copy()
        packed.flags.writeable = False
        self._packed = packed
        self._n_cols = n_cols

    @classmethod
    def from_array(cls, bits) -> "BitMatrix":
        """Pack a 2-D array of 0/1 (or bool) values."""
        arr = np.asarray(bits)
        if arr.ndim != 2:
            raise ShapeError(f"expected a 2-D array, got shape {arr.shape}")
        if arr.size and not np.all((arr == 0) | (arr == 1)):
            raise ValueError("bit matrix entries must be 0 or 1")
        packed = np.packbits(arr.astype(np.uint8), axis=1, bitorder="little")
        if packed.shape[1] != (arr.shape[1] + 7) // 8:
            packed = packed.reshape(arr.shape[0], (arr.shape[1] + 7) // 8)
        return cls(packed, arr.shape[1])

    @classmethod
    def zeros(cls, n_rows: int, n_cols: int) -> "BitMatrix":
        return cls(np.zeros((n_rows, (n_cols + 7) // 8), np.uint8), n_cols)

    @property
    def n_rows(self) -> int:
        return self._packed.shape[0]

    @property
    def n_cols(self) -> int:
        return self._n_cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    def to_array(self, dtype=np.uint8) -> np.ndarray:
        """Unpack to a dense (n_rows, n_cols) array."""
        if self.n_rows == 0 or self.n_cols == 0:
            return np.zeros(self.shape, dtype=dtype)
        out = np.unpackbits(self._packed, axis=1, count=self.n_cols, bitorder="little")
        return out.astype(dtype, copy=False)

    def __array__(self, dtype=None, copy=None):
        return self.to_array(dtype or np.uint8)

    def get(self, i: int, j: int) -> int:
        if not (0 <= i < self.n_rows and 0 <= j < self.n_cols):
            raise IndexError(f"bit ({i}, {j}) outside {self.shape}")
        return int((self._packed[i, j >> 3] >> (j & 7)) & 1)

    def rows(self, index) -> "BitMatrix":
        """Select rows by integer index array, slice or boolean mask."""
        sub = self._packed[index]
        if sub.ndim == 1:
            sub = sub[None, :]
        return BitMatrix(sub, self.n_cols)

    def row_counts(self) -> np.ndarray:
        """Number of set bits per row."""
        return np.bitwise_count(self._packed).sum(axis=1, dtype=np.int64)

    def __len__(self):
        return self.n_rows

    def __eq__(self, other):
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._packed, other._packed)

    def __hash__(self):
        return hash((self.shape, self._packed.tobytes()))

    def __repr__(self):
        return f"BitMatrix(n_rows={self.n_rows}, n_cols={self.n_cols})"


def pack_rows(rows) -> BitMatrix:
    """Build a BitMatrix from a sequence of equal-length 0/1 rows."""
    rows = list(rows)
    if not rows:
        return BitMatrix.zeros(0, 0)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ShapeError("rows have unequal lengths")
    return BitMatrix.from_array(np.asarray(rows, dtype=np.uint8).reshape(len(rows), width))


def vstack(mats) -> BitMatrix:
    mats = list(mats)
    if not mats:
        return BitMatrix.zeros(0, 0)
    width = mats[0].n_cols
    if any(m.n_cols != width for m in mats):
        raise ShapeError("cannot stack bit matrices of different widths")
    return BitMatrix(np.concatenate([m.packed for m in mats], axis=0), width)


def as_bits(Z) -> np.ndarray:
    """Dense uint8 view of a BitMatrix or a 0/1 array-like."""
    if isinstance(Z, BitMatrix):
        return Z.to_array()
    arr = np.asarray(Z)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D binary matrix, got shape {arr.shape}")
    return arr.astype(np.uint8, copy=False)


def column_means(Z) -> np.ndarray:
    """Frequency of ones in every column."""
    bits = as_bits(Z)
    if bits.shape[0] == 0:
        raise EmptyInputError("column_means needs at least one row")
    return bits.mean(axis=0, dtype=np.float64)
