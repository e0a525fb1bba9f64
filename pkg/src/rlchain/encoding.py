"""Fixed-width big-endian binary encoding used for every hashed or signed structure.

Integers are big-endian fixed width, byte strings and text carry a u32
length prefix, hashes and keys are written raw.
"""
from __future__ import annotations

import hashlib
import struct

from rlchain.errors import SerializationError

MAX_FIELD = 64 * 1024
HASH_LEN = 32
KEY_LEN = 32
SIG_LEN = 64
ZERO_HASH = bytes(HASH_LEN)
EMPTY_SHA256 = hashlib.sha256(b"").digest()


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def check_hash(value: bytes, what: str = "hash") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != HASH_LEN:
        raise SerializationError(f"{what} must be exactly {HASH_LEN} bytes")
    return bytes(value)


def parse_hex(text: str, length: int | None = None, what: str = "value") -> bytes:
    try:
        raw = bytes.fromhex(text)
    except (ValueError, TypeError) as exc:
        raise SerializationError(f"{what}: malformed hex") from exc
    if length is not None and len(raw) != length:
        raise SerializationError(f"{what}: expected {length} bytes, got {len(raw)}")
    return raw


class Writer:
    __slots__ = ("_parts",)

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        if not isinstance(v, int) or not 0 <= v <= 0xFF:
            raise SerializationError(f"u8 out of range: {v}")
        self._parts.append(bytes((v,)))
        return self

    def u32(self, v: int) -> "Writer":
        if not isinstance(v, int) or not 0 <= v <= 0xFFFFFFFF:
            raise SerializationError(f"u32 out of range: {v}")
        self._parts.append(struct.pack(">I", v))
        return self

    def u64(self, v: int) -> "Writer":
        if not isinstance(v, int) or not 0 <= v <= 0xFFFFFFFFFFFFFFFF:
            raise SerializationError(f"u64 out of range: {v}")
        self._parts.append(struct.pack(">Q", v))
        return self

    def fixed(self, data: bytes, length: int) -> "Writer":
        if not isinstance(data, (bytes, bytearray)) or len(data) != length:
            raise SerializationError(f"expected {length} raw bytes")
        self._parts.append(bytes(data))
        return self

    def var(self, data: bytes) -> "Writer":
        if not isinstance(data, (bytes, bytearray)):
            raise SerializationError("byte field must be bytes")
        if len(data) > MAX_FIELD:
            raise SerializationError(f"field of {len(data)} bytes exceeds 64 KiB")
        self.u32(len(data))
        self._parts.append(bytes(data))
        return self

    def text(self, s: str, max_chars: int | None = None) -> "Writer":
        if not isinstance(s, str):
            raise SerializationError("text field must be str")
        if max_chars is not None and len(s) > max_chars:
            raise SerializationError(f"text longer than {max_chars} chars")
        return self.var(s.encode("utf-8"))

    def flag(self, b: bool) -> "Writer":
        return self.u8(1 if b else 0)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    """Strict reader: any leftover or missing byte is an error."""

    __slots__ = ("_buf", "_pos")

    def __init__(self, buf: bytes) -> None:
        self._buf = memoryview(buf)
        self._pos = 0

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if end > len(self._buf):
            raise SerializationError("truncated input")
        out = self._buf[self._pos:end].tobytes()
        self._pos = end
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def fixed(self, n: int) -> bytes:
        return self._take(n)

    def var(self) -> bytes:
        n = self.u32()
        if n > MAX_FIELD:
            raise SerializationError("field exceeds 64 KiB")
        return self._take(n)

    def text(self, max_chars: int | None = None) -> str:
        raw = self.var()
        try:
            s = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SerializationError("invalid utf-8 in text field") from exc
        if max_chars is not None and len(s) > max_chars:
            raise SerializationError(f"text longer than {max_chars} chars")
        return s

    def flag(self) -> bool:
        v = self.u8()
        if v > 1:
            raise SerializationError(f"flag byte must be 0 or 1, got {v}")
        return v == 1

    @property
    def remaining(self) -> int:
        return len(self._buf) - self._pos

    def done(self) -> None:
        if self.remaining:
            raise SerializationError(f"{self.remaining} trailing bytes")
