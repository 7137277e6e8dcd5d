"""Low-level helpers shared by the binary file codecs.

All on-disk formats are little-endian and fully self-describing; every
decoder consumes the byte stream exactly (trailing bytes are an error) so
that save/load round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np


class FormatError(ValueError):
    """A byte stream does not conform to one of the binary formats."""


class BadMagicError(FormatError):
    """The stream does not start with the expected magic tag."""


class TruncatedError(FormatError):
    """The stream ended before the declared payload was complete."""


class NonFiniteError(FormatError):
    """The payload contains NaN or infinite values."""


class Reader:
    """Cursor over an immutable byte buffer with format-aware errors."""

    def __init__(self, data: bytes, source: str = "<bytes>"):
        self.data = data
        self.source = source
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(
                f"{self.source}: needed {n} more bytes at offset {self.pos}, "
                f"only {len(self.data) - self.pos} remain"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def magic(self, expected: bytes) -> None:
        got = self.data[: len(expected)]
        if got != expected:
            raise BadMagicError(
                f"{self.source}: expected magic {expected!r}, found {got!r}"
            )
        self.pos = len(expected)

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def f32_array(self, count: int) -> np.ndarray:
        raw = self._take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).copy()

    def f64_array(self, count: int) -> np.ndarray:
        raw = self._take(8 * count)
        return np.frombuffer(raw, dtype="<f8", count=count).copy()

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.source}: {len(self.data) - self.pos} trailing bytes "
                "after declared payload"
            )


def u16(v: int) -> bytes:
    return struct.pack("<H", v)


def u32(v: int) -> bytes:
    return struct.pack("<I", v)


def u64(v: int) -> bytes:
    return struct.pack("<Q", v)


def f64(v: float) -> bytes:
    return struct.pack("<d", v)


def f32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def f64_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()
