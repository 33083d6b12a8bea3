"""Canonical byte encoding and digests.

Every signed or hashed structure is serialized with the same rules so that
two nodes always derive identical bytes for identical values:

* unsigned integers -> tag ``I`` + 8-byte big-endian
* byte strings      -> tag ``B`` + 4-byte big-endian length + raw bytes
* text              -> tag ``S`` + utf-8, length-prefixed like bytes
* sequences         -> tag ``L`` + 4-byte count + packed elements

Digests are sha256 over a packed tuple whose first field is a short
domain-separation label, so a batch hash can never collide with, say, a
commit-certificate digest of coincidentally equal fields.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Union

Field = Union[int, bytes, str, Iterable["Field"]]

_U64_MAX = (1 << 64) - 1


def pack(*fields: Field) -> bytes:
    """Serialize fields canonically, in the order given."""
    out = bytearray()
    for field in fields:
        _pack_into(out, field)
    return bytes(out)


def _pack_into(out: bytearray, field: Field) -> None:
    if isinstance(field, bool):
        raise TypeError("bool is not a canonical field type")
    if isinstance(field, int):
        if not 0 <= field <= _U64_MAX:
            raise ValueError(f"integer field out of u64 range: {field}")
        out += b"I"
        out += field.to_bytes(8, "big")
    elif isinstance(field, bytes):
        out += b"B"
        out += len(field).to_bytes(4, "big")
        out += field
    elif isinstance(field, str):
        raw = field.encode("utf-8")
        out += b"S"
        out += len(raw).to_bytes(4, "big")
        out += raw
    elif isinstance(field, (list, tuple)):
        out += b"L"
        out += len(field).to_bytes(4, "big")
        for item in field:
            _pack_into(out, item)
    else:
        raise TypeError(f"cannot pack field of type {type(field).__name__}")


def digest(label: str, *fields: Field) -> bytes:
    """32-byte domain-separated digest of the packed fields."""
    return hashlib.sha256(pack(label, *fields)).digest()


class Reader:
    """Sequential decoder for canonically packed bytes.

    Raises ValueError on any malformation; callers treat that as a reject.
    """

    __slots__ = ("_buf", "_pos")

    def __init__(self, buf: bytes, pos: int = 0):
        self._buf = buf
        self._pos = pos

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if end > len(self._buf):
            raise ValueError("truncated field")
        chunk = self._buf[self._pos:end]
        self._pos = end
        return chunk

    def _expect_tag(self, tag: bytes) -> None:
        got = self._take(1)
        if got != tag:
            raise ValueError(f"expected field tag {tag!r}, got {got!r}")

    def u64(self) -> int:
        self._expect_tag(b"I")
        return int.from_bytes(self._take(8), "big")

    def bytes_(self) -> bytes:
        self._expect_tag(b"B")
        n = int.from_bytes(self._take(4), "big")
        return self._take(n)

    def str_(self) -> str:
        self._expect_tag(b"S")
        n = int.from_bytes(self._take(4), "big")
        return self._take(n).decode("utf-8")

    def seq_len(self) -> int:
        self._expect_tag(b"L")
        return int.from_bytes(self._take(4), "big")

    def done(self) -> bool:
        return self._pos >= len(self._buf)

    def expect_done(self) -> None:
        if not self.done():
            raise ValueError("trailing bytes after message")
