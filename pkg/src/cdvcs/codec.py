"""Length-prefixed canonical binary encoding primitives.

Every variable-sized field is written as a big-endian ``u32`` length
followed by its bytes, so encodings are unambiguous and identical on
every platform. Collections that have no inherent order are sorted by
their encoded form before writing.
"""

from __future__ import annotations

import hashlib
import struct

from .errors import DecodeError

DIGEST_SIZE = 32

_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class Writer:
    __slots__ = ("_parts",)

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> Writer:
        self._parts.append(_U8.pack(value))
        return self

    def u32(self, value: int) -> Writer:
        self._parts.append(_U32.pack(value))
        return self

    def u64(self, value: int) -> Writer:
        self._parts.append(_U64.pack(value))
        return self

    def raw(self, data: bytes) -> Writer:
        self._parts.append(data)
        return self

    def blob(self, data: bytes) -> Writer:
        self._parts.append(_U32.pack(len(data)))
        self._parts.append(data)
        return self

    def text(self, value: str) -> Writer:
        return self.blob(value.encode("utf-8"))

    def digest(self, value: bytes) -> Writer:
        if len(value) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(value)}")
        self._parts.append(value)
        return self

    def digests(self, values) -> Writer:
        """Write a counted sequence of digests in the given order."""
        values = list(values)
        self.u32(len(values))
        for v in values:
            self.digest(v)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    __slots__ = ("_buf", "_pos")

    def __init__(self, data: bytes) -> None:
        self._buf = memoryview(data)
        self._pos = 0

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if end > len(self._buf):
            raise DecodeError("truncated input")
        out = bytes(self._buf[self._pos:end])
        self._pos = end
        return out

    def u8(self) -> int:
        return _U8.unpack(self._take(1))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid utf-8") from exc

    def digest(self) -> bytes:
        return self._take(DIGEST_SIZE)

    def digests(self) -> list[bytes]:
        return [self.digest() for _ in range(self.u32())]

    def at_end(self) -> bool:
        return self._pos == len(self._buf)

    def finish(self) -> None:
        if not self.at_end():
            raise DecodeError(f"{len(self._buf) - self._pos} trailing bytes")
