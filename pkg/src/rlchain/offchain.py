"""Content-addressed record storage and per-stakeholder tables of contents.

On disk, under one store root::

    cas/aa/bb/<64 hex>.rec       record bytes, addressed by SHA-256
    toc/<stakeholder hex>.log    u32 BE frame length + entry preimage, repeated

A TOC entry preimage is ``0x00 | u32 BE key length | key utf-8 | content_hash``
and its SHA-256 is the entry hash that gets Merkle-anchored on chain.
"""
from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from rlchain.crypto import Keypair
from rlchain.encoding import HASH_LEN, Reader, Writer, check_hash, sha256
from rlchain.errors import (
    IntegrityFailure,
    NoProgress,
    NotFound,
    OutOfRange,
    PermissionDenied,
    SerializationError,
    TooLarge,
)
from rlchain.merkle import LEFT, RIGHT, PathStep, merkle_path, merkle_root, root_from_path
from rlchain.model import MAX_KEY, TocAnchor
from rlchain.tx import AnchorToc, Transaction, make_tx

MAX_RECORD = 1024 * 1024
ENTRY_TAG = 0x00
_FRAME = struct.Struct(">I")


class ContentStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, address: bytes) -> Path:
        h = address.hex()
        return self.root / h[:2] / h[2:4] / f"{h}.rec"

    def put_record(self, data: bytes) -> bytes:
        if len(data) > MAX_RECORD:
            raise TooLarge(f"record of {len(data)} bytes exceeds 1 MiB")
        address = sha256(data)
        path = self.path_for(address)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
            tmp.write_bytes(data)
            os.replace(tmp, path)
        return address

    def get_record(self, address: bytes) -> bytes:
        check_hash(address, "address")
        path = self.path_for(address)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise NotFound(f"record {address.hex()}") from None
        if sha256(data) != address:
            raise IntegrityFailure(f"stored bytes for {address.hex()} do not match their address")
        return data

    def has(self, address: bytes) -> bool:
        return self.path_for(address).exists()

    def addresses(self) -> Iterator[bytes]:
        for p in sorted(self.root.glob("*/*/*.rec")):
            yield bytes.fromhex(p.stem)


def entry_preimage(key: str, content_hash: bytes) -> bytes:
    if len(key) > MAX_KEY:
        raise SerializationError(f"TOC key longer than {MAX_KEY} chars")
    return Writer().u8(ENTRY_TAG).text(key).fixed(content_hash, HASH_LEN).getvalue()


@dataclass(frozen=True)
class TocEntry:
    key: str
    content_hash: bytes
    entry_hash: bytes

    @classmethod
    def make(cls, key: str, content_hash: bytes) -> "TocEntry":
        return cls(key, content_hash, sha256(entry_preimage(key, content_hash)))

    @classmethod
    def parse(cls, preimage: bytes) -> "TocEntry":
        r = Reader(preimage)
        if r.u8() != ENTRY_TAG:
            raise SerializationError("bad TOC entry tag")
        key = r.text(MAX_KEY)
        content = r.fixed(HASH_LEN)
        r.done()
        return cls(key, content, sha256(preimage))

    def recomputes(self) -> bool:
        return sha256(entry_preimage(self.key, self.content_hash)) == self.entry_hash


class Toc:
    """One stakeholder's append-only table of contents."""

    def __init__(self, path: str | Path, owner: bytes):
        self.path = Path(path)
        self.owner = owner
        self._lock = threading.Lock()
        self.entries: list[TocEntry] = []
        self.torn_bytes = 0
        self._end = 0
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        pos = 0
        while pos + _FRAME.size <= len(data):
            (n,) = _FRAME.unpack_from(data, pos)
            end = pos + _FRAME.size + n
            if end > len(data):
                break
            self.entries.append(TocEntry.parse(data[pos + _FRAME.size:end]))
            pos = end
        self.torn_bytes = len(data) - pos
        self._end = pos

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def entry_hashes(self, length: Optional[int] = None) -> list[bytes]:
        entries = self.entries if length is None else self.entries[:length]
        return [e.entry_hash for e in entries]

    def root(self, length: Optional[int] = None) -> bytes:
        return merkle_root(self.entry_hashes(length))

    def find(self, content_hash: bytes, limit: Optional[int] = None) -> Optional[int]:
        entries = self.entries if limit is None else self.entries[:limit]
        for i, e in enumerate(entries):
            if e.content_hash == content_hash:
                return i
        return None

    def append(self, signer: Keypair, key: str, content_hash: bytes,
               cas: Optional[ContentStore] = None) -> tuple[int, TocEntry]:
        if signer.public != self.owner:
            raise PermissionDenied("TOC belongs to another stakeholder")
        check_hash(content_hash, "content_hash")
        if cas is not None and not cas.has(content_hash):
            raise NotFound(f"content {content_hash.hex()} not in local store")
        preimage = entry_preimage(key, content_hash)
        entry = TocEntry(key, content_hash, sha256(preimage))
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "r+b" if self.path.exists() else "wb") as f:
                f.truncate(self._end)  # drop a torn tail left by a crash
                f.seek(self._end)
                f.write(_FRAME.pack(len(preimage)) + preimage)
                f.flush()
                os.fsync(f.fileno())
            self._end += _FRAME.size + len(preimage)
            self.torn_bytes = 0
            self.entries.append(entry)
            return len(self.entries) - 1, entry


class OffchainStore:
    """A stakeholder's (or node's) local store: CAS plus TOC files."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.cas = ContentStore(self.root / "cas")
        self.toc_dir = self.root / "toc"

    def toc_path(self, owner: bytes) -> Path:
        return self.toc_dir / f"{owner.hex()}.log"

    def toc(self, owner: bytes) -> Toc:
        return Toc(self.toc_path(owner), owner)

    def has_toc(self, owner: bytes) -> bool:
        return self.toc_path(owner).exists()

    def put_and_index(self, signer: Keypair, key: str, data: bytes) -> tuple[bytes, int]:
        """Store a record and append it to the signer's TOC in one step."""
        address = self.cas.put_record(data)
        index, _ = self.toc(signer.public).append(signer, key, address, self.cas)
        return address, index


def anchor_toc(signer: Keypair, toc: Toc, last_anchored: int, nonce: int, chain_id: int) -> Transaction:
    """Build the ANCHOR_TOC transaction committing the whole current TOC."""
    if signer.public != toc.owner:
        raise PermissionDenied("TOC belongs to another stakeholder")
    if len(toc) <= last_anchored:
        raise NoProgress(f"TOC has {len(toc)} entries, {last_anchored} already anchored")
    return make_tx(AnchorToc(len(toc), toc.root()), signer, nonce, chain_id)


@dataclass(frozen=True)
class MembershipProof:
    leaf_index: int
    path: tuple[PathStep, ...]
    anchor: TocAnchor


def expected_path_length(n: int) -> int:
    return (n - 1).bit_length() if n > 1 else 0


def prove_membership(toc: Toc, index: int, anchor: TocAnchor) -> MembershipProof:
    if not 0 <= index < anchor.toc_length:
        raise OutOfRange(f"index {index} outside anchored range 0..{anchor.toc_length - 1}")
    if len(toc) < anchor.toc_length:
        raise OutOfRange("local TOC is shorter than the anchored length")
    path = merkle_path(toc.entry_hashes(anchor.toc_length), index)
    return MembershipProof(index, tuple(path), anchor)


def verify_membership(entry: TocEntry, proof: MembershipProof, anchor: TocAnchor) -> bool:
    if proof.anchor != anchor or not entry.recomputes():
        return False
    n, idx = anchor.toc_length, proof.leaf_index
    if not 0 <= idx < n or len(proof.path) != expected_path_length(n):
        return False
    for step in proof.path:
        if step.side != (LEFT if idx % 2 else RIGHT):
            return False
        idx //= 2
    return root_from_path(entry.entry_hash, proof.path) == anchor.toc_root
