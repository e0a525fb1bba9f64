"""Append-only block log.

``blocks.log`` holds one record per block: a u32 big-endian length followed by
the block bytes. ``blocks.idx`` holds one u64 big-endian offset per record and
is always derivable from the log, so on open it is rebuilt whenever it does
not agree with what the log actually contains. A torn final record (crash
mid-append) is cut off and the store resumes at the last complete block.
"""
from __future__ import annotations

import logging
import os
import struct
import threading
from pathlib import Path

log = logging.getLogger(__name__)

_LEN = struct.Struct(">I")
_OFF = struct.Struct(">Q")


class BlockStore:
    def __init__(self, directory: str | Path, fsync: bool = True):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.dir / "blocks.log"
        self.idx_path = self.dir / "blocks.idx"
        self.fsync = fsync
        self._lock = threading.Lock()
        self.offsets: list[int] = []
        self.recovered_bytes = 0
        self._recover()
        self._log = open(self.log_path, "ab")
        self._idx = open(self.idx_path, "ab")

    def _recover(self) -> None:
        self.log_path.touch(exist_ok=True)
        data = self.log_path.read_bytes()
        pos, offsets = 0, []
        while pos + _LEN.size <= len(data):
            (n,) = _LEN.unpack_from(data, pos)
            if pos + _LEN.size + n > len(data):
                break
            offsets.append(pos)
            pos += _LEN.size + n
        if pos != len(data):
            self.recovered_bytes = len(data) - pos
            log.warning("truncating %d bytes of torn record at end of %s", self.recovered_bytes, self.log_path)
            with open(self.log_path, "r+b") as f:
                f.truncate(pos)
                os.fsync(f.fileno())
        expected = b"".join(_OFF.pack(o) for o in offsets)
        if not self.idx_path.exists() or self.idx_path.read_bytes() != expected:
            tmp = self.idx_path.with_suffix(".idx.tmp")
            tmp.write_bytes(expected)
            os.replace(tmp, self.idx_path)
        self.offsets = offsets
        self._end = pos

    def __len__(self) -> int:
        return len(self.offsets)

    def append(self, block_bytes: bytes) -> int:
        with self._lock:
            offset = self._end
            self._log.write(_LEN.pack(len(block_bytes)) + block_bytes)
            self._log.flush()
            if self.fsync:
                os.fsync(self._log.fileno())
            self._idx.write(_OFF.pack(offset))
            self._idx.flush()
            self.offsets.append(offset)
            self._end = offset + _LEN.size + len(block_bytes)
            return len(self.offsets) - 1

    def read(self, height: int) -> bytes:
        offset = self.offsets[height]
        with open(self.log_path, "rb") as f:
            f.seek(offset)
            (n,) = _LEN.unpack(f.read(_LEN.size))
            return f.read(n)

    def read_all(self) -> list[bytes]:
        data = self.log_path.read_bytes()
        out = []
        for off in self.offsets:
            (n,) = _LEN.unpack_from(data, off)
            out.append(data[off + _LEN.size: off + _LEN.size + n])
        return out

    def close(self) -> None:
        with self._lock:
            self._log.close()
            self._idx.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
