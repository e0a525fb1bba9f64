"""Block headers, blocks, the genesis configuration and their byte encodings."""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

from rlchain.crypto import Keypair, verify
from rlchain.encoding import (
    EMPTY_SHA256,
    HASH_LEN,
    KEY_LEN,
    SIG_LEN,
    ZERO_HASH,
    Reader,
    Writer,
    parse_hex,
    sha256,
)
from rlchain.errors import SerializationError
from rlchain.merkle import merkle_root
from rlchain.tx import Transaction, canonical_serialize, deserialize, tx_hash

BLOCK_VERSION = 1
BLOCK_DOMAIN = b"RLCHAIN/BLOCK/v1\x00"
MAX_BLOCK_TXS = 100_000


@dataclass(frozen=True)
class GenesisConfig:
    """Fixed at chain creation. Stored as JSON::

        {"chain_id": 7, "genesis_time": 1700000000,
         "validators": ["<64 hex>", ...], "registrars": ["<64 hex>", ...]}
    """

    chain_id: int
    validators: tuple[bytes, ...]
    registrars: tuple[bytes, ...]
    genesis_time: int = 0

    def __post_init__(self):
        if not self.validators:
            raise ValueError("genesis needs at least one validator")
        if not 0 <= self.chain_id < 2**64:
            raise ValueError("chain_id must fit in u64")

    def proposer_for(self, height: int) -> bytes:
        return self.validators[(height - 1) % len(self.validators)]

    def to_json(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "genesis_time": self.genesis_time,
            "validators": [v.hex() for v in self.validators],
            "registrars": [r.hex() for r in self.registrars],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GenesisConfig":
        return cls(
            chain_id=int(obj["chain_id"]),
            validators=tuple(parse_hex(v, KEY_LEN, "validator") for v in obj["validators"]),
            registrars=tuple(parse_hex(r, KEY_LEN, "registrar") for r in obj.get("registrars", [])),
            genesis_time=int(obj.get("genesis_time", 0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "GenesisConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


@dataclass(frozen=True)
class BlockHeader:
    version: int
    height: int
    prev_hash: bytes
    tx_merkle_root: bytes
    timestamp: int
    proposer: bytes
    seal: bytes = bytes(SIG_LEN)

    def unsealed_bytes(self) -> bytes:
        return (Writer().u32(self.version).u64(self.height).fixed(self.prev_hash, HASH_LEN)
                .fixed(self.tx_merkle_root, HASH_LEN).u64(self.timestamp)
                .fixed(self.proposer, KEY_LEN).getvalue())

    def serialize(self) -> bytes:
        return self.unsealed_bytes() + self.seal

    def seal_message(self, chain_id: int) -> bytes:
        return BLOCK_DOMAIN + chain_id.to_bytes(8, "big") + self.unsealed_bytes()

    def sealed(self, key: Keypair, chain_id: int) -> "BlockHeader":
        return replace(self, seal=key.sign(self.seal_message(chain_id)))

    def seal_valid(self, chain_id: int) -> bool:
        return verify(self.proposer, self.seal_message(chain_id), self.seal)

    @cached_property
    def hash(self) -> bytes:
        return sha256(self.serialize())

    @classmethod
    def read(cls, r: Reader) -> "BlockHeader":
        return cls(r.u32(), r.u64(), r.fixed(HASH_LEN), r.fixed(HASH_LEN), r.u64(),
                   r.fixed(KEY_LEN), r.fixed(SIG_LEN))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...] = field(default_factory=tuple)

    @property
    def height(self) -> int:
        return self.header.height

    @property
    def hash(self) -> bytes:
        return self.header.hash

    @cached_property
    def tx_hashes(self) -> tuple[bytes, ...]:
        return tuple(tx_hash(t) for t in self.transactions)

    def computed_root(self) -> bytes:
        return merkle_root(list(self.tx_hashes))

    def serialize(self) -> bytes:
        w = Writer()
        w.fixed(self.header.serialize(), len(self.header.serialize()))
        w.u32(len(self.transactions))
        for t in self.transactions:
            raw = canonical_serialize(t)
            w.u32(len(raw)).fixed(raw, len(raw))
        return w.getvalue()


@functools.lru_cache(maxsize=4096)
def decode_block(data: bytes) -> Block:
    r = Reader(data)
    header = BlockHeader.read(r)
    n = r.u32()
    if n > MAX_BLOCK_TXS:
        raise SerializationError("implausible transaction count")
    txs = []
    for _ in range(n):
        size = r.u32()
        txs.append(deserialize(r.fixed(size)))
    r.done()
    return Block(header, tuple(txs))


def genesis_block(genesis: GenesisConfig) -> Block:
    header = BlockHeader(
        version=BLOCK_VERSION,
        height=0,
        prev_hash=ZERO_HASH,
        tx_merkle_root=EMPTY_SHA256,
        timestamp=genesis.genesis_time,
        proposer=bytes(KEY_LEN),
    )
    return Block(header, ())
