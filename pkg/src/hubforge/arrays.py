"""N-dimensional numeric arrays exchanged between loaders, backends, and stores.

A :class:`DataArray` is the lingua franca of the inference pipeline: loaders
and converters produce one, backends consume and emit them, and the artifact
store serializes them. Arrays are immutable (the underlying numpy buffer is
marked read-only) so they can be shared freely between pipeline stages and
concurrent requests.
"""

from __future__ import annotations

from typing import Any

import numpy as np

# Closed dtype set; tags double as the wire identifiers in artifact files.
DTYPE_TO_NUMPY = {
    "u8": np.dtype(np.uint8),
    "i32": np.dtype(np.int32),
    "f32": np.dtype(np.float32),
    "f64": np.dtype(np.float64),
}
NUMPY_TO_DTYPE = {v: k for k, v in DTYPE_TO_NUMPY.items()}

INTEGER_DTYPES = frozenset({"u8", "i32"})


class UnsupportedDtype(ValueError):
    """Raised when wrapping an array whose element type is outside the closed set."""


class DataArray:
    """Immutable row-major numeric array with a tagged element type.

    Wraps a C-contiguous, read-only numpy array whose dtype is one of
    u8, i32, f32, f64. Rank is always >= 1.
    """

    __slots__ = ("_array",)

    def __init__(self, values: Any, dtype: str | None = None):
        if dtype is not None:
            if dtype not in DTYPE_TO_NUMPY:
                raise UnsupportedDtype(f"unknown dtype tag {dtype!r}")
            arr = np.asarray(values, dtype=DTYPE_TO_NUMPY[dtype])
        else:
            arr = np.asarray(values)
            if arr.dtype not in NUMPY_TO_DTYPE:
                # Normalize the common platform-dependent cases.
                if arr.dtype == np.bool_:
                    arr = arr.astype(np.uint8)
                elif np.issubdtype(arr.dtype, np.integer):
                    arr = arr.astype(np.int32)
                elif np.issubdtype(arr.dtype, np.floating):
                    arr = arr.astype(np.float64)
                else:
                    raise UnsupportedDtype(f"unsupported element type {arr.dtype}")
        if arr.ndim < 1:
            raise ValueError("rank must be >= 1")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self._array = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def rank(self) -> int:
        return self._array.ndim

    @property
    def dtype(self) -> str:
        return NUMPY_TO_DTYPE[self._array.dtype]

    @property
    def size(self) -> int:
        return int(self._array.size)

    def to_numpy(self) -> np.ndarray:
        """Read-only view of the backing numpy array."""
        return self._array

    def tolist(self) -> list:
        return self._array.tolist()

    def tobytes_le(self) -> bytes:
        """Element buffer in row-major order, little-endian regardless of host."""
        return self._array.astype(self._array.dtype.newbyteorder("<"), copy=False).tobytes(order="C")

    @classmethod
    def from_bytes_le(cls, payload: bytes, dtype: str, shape: tuple[int, ...]) -> "DataArray":
        np_dtype = DTYPE_TO_NUMPY[dtype].newbyteorder("<")
        arr = np.frombuffer(payload, dtype=np_dtype).reshape(shape)
        return cls(arr.astype(DTYPE_TO_NUMPY[dtype]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DataArray):
            return NotImplemented
        return (
            self.dtype == other.dtype
            and self.shape == other.shape
            and bool(np.array_equal(self._array, other._array))
        )

    def __hash__(self) -> int:
        return hash((self.dtype, self.shape, self._array.tobytes()))

    def __repr__(self) -> str:
        return f"DataArray(shape={list(self.shape)}, dtype={self.dtype})"
