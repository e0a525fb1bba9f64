"""Ledger state, proof-of-authority sealing and whole-chain verification."""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from rlchain.block import (
    BLOCK_VERSION,
    Block,
    BlockHeader,
    GenesisConfig,
    decode_block,
    genesis_block,
)
from rlchain.crypto import Keypair
from rlchain.errors import (
    BadSignature,
    CorruptChain,
    PermissionDenied,
    RLError,
    SchedulingError,
    StaleNonce,
)
from rlchain.merkle import merkle_root
from rlchain.registry import Registry
from rlchain.tx import Transaction, tx_hash


@dataclass
class LedgerState:
    genesis: GenesisConfig
    registry: Registry
    nonces: dict[bytes, int] = field(default_factory=dict)
    height: int = 0
    tip_hash: bytes = b""
    tip_timestamp: int = 0
    committed: dict[bytes, int] = field(default_factory=dict)
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    @classmethod
    def from_genesis(cls, genesis: GenesisConfig) -> "LedgerState":
        g = genesis_block(genesis)
        return cls(
            genesis=genesis,
            registry=Registry(frozenset(genesis.registrars)),
            height=0,
            tip_hash=g.hash,
            tip_timestamp=g.header.timestamp,
        )

    @property
    def chain_id(self) -> int:
        return self.genesis.chain_id

    def check_admissible(self, tx: Transaction) -> None:
        """Signature and nonce checks that do not depend on registry contents."""
        if not tx.verify(self.chain_id):
            raise BadSignature("signature does not verify for this chain")
        last = self.nonces.get(tx.sender)
        if last is not None and tx.nonce <= last:
            raise StaleNonce(f"nonce {tx.nonce} <= last committed {last}")

    def apply_tx(self, tx: Transaction, height: int):
        self.check_admissible(tx)
        result = self.registry.apply(tx.sender, tx.payload, height)
        self.nonces[tx.sender] = tx.nonce
        self.committed[tx_hash(tx)] = height
        return result

    def apply_block(self, block: Block) -> None:
        """Replay path: every transaction in a committed block must apply."""
        if block.height != self.height + 1 or block.header.prev_hash != self.tip_hash:
            raise CorruptChain(f"block {block.height} does not extend tip {self.height}")
        for i, tx in enumerate(block.transactions):
            try:
                self.apply_tx(tx, block.height)
            except RLError as exc:
                raise CorruptChain(f"block {block.height} tx {i}: {exc}") from exc
        self._advance(block)

    def _advance(self, block: Block) -> None:
        self.height = block.height
        self.tip_hash = block.hash
        self.tip_timestamp = block.header.timestamp

    def state_digest(self) -> bytes:
        return self.registry.state_digest()


def replay(genesis: GenesisConfig, blocks: Iterable[Block]) -> LedgerState:
    """Rebuild state from a block sequence that starts at genesis."""
    state = LedgerState.from_genesis(genesis)
    it = iter(blocks)
    first = next(it, None)
    if first is not None and first != genesis_block(genesis):
        raise CorruptChain("first block is not this genesis")
    for block in it:
        state.apply_block(block)
    return state


def seal_block(
    pending: Sequence[Transaction],
    state: LedgerState,
    key: Keypair,
    *,
    allow_empty: bool = False,
    timestamp: Optional[int] = None,
    on_reject: Optional[Callable[[Transaction, RLError], None]] = None,
    on_apply: Optional[Callable[[Transaction, float], None]] = None,
) -> Optional[Block]:
    """Apply ``pending`` in order on top of ``state`` and seal the result.

    Transactions that fail validation are left out and reported through
    ``on_reject``; they never abort the block. Returns None when nothing
    was included and empty blocks are not allowed. ``state`` is mutated.
    """
    genesis = state.genesis
    if key.public not in genesis.validators:
        raise PermissionDenied("sealing key is not a genesis validator")
    with state.lock:
        height = state.height + 1
        if genesis.proposer_for(height) != key.public:
            raise SchedulingError(f"height {height} belongs to another validator")
        included = []
        for tx in pending:
            t0 = time.perf_counter()
            try:
                state.apply_tx(tx, height)
            except RLError as exc:
                if on_reject is not None:
                    on_reject(tx, exc)
                continue
            if on_apply is not None:
                on_apply(tx, time.perf_counter() - t0)
            included.append(tx)
        if not included and not allow_empty:
            return None
        ts = int(time.time()) if timestamp is None else timestamp
        header = BlockHeader(
            version=BLOCK_VERSION,
            height=height,
            prev_hash=state.tip_hash,
            tx_merkle_root=merkle_root([tx_hash(t) for t in included]),
            timestamp=max(ts, state.tip_timestamp),
            proposer=key.public,
        ).sealed(key, genesis.chain_id)
        block = Block(header, tuple(included))
        state._advance(block)
        return block


CHECKS = ("decodes", "height", "hash_link", "merkle_root", "seal", "proposer", "timestamp", "tx_signatures")


@dataclass
class BlockCheck:
    index: int
    checks: dict[str, bool]
    bad_txs: list[int] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failed(self) -> list[str]:
        return [name for name, ok in self.checks.items() if not ok]

    def to_json(self) -> dict:
        return {"index": self.index, "ok": self.ok, "checks": self.checks,
                "bad_txs": self.bad_txs, "notes": self.notes}


@dataclass
class ChainReport:
    blocks: list[BlockCheck]

    @property
    def ok(self) -> bool:
        return bool(self.blocks) and all(b.ok for b in self.blocks)

    def failing_blocks(self) -> list[int]:
        return [b.index for b in self.blocks if not b.ok]

    def to_json(self) -> dict:
        return {"ok": self.ok, "length": len(self.blocks),
                "failing_blocks": self.failing_blocks(),
                "blocks": [b.to_json() for b in self.blocks]}


def verify_chain(chain: Sequence[Block | bytes | None], genesis: GenesisConfig) -> ChainReport:
    """Check every block independently of node state.

    Entries may be decoded blocks or raw block bytes; raw entries that fail
    to decode are reported against their index. Never raises on bad input.
    """
    expected_genesis = genesis_block(genesis)
    reports = []
    prev: Optional[Block] = None
    for i, item in enumerate(chain):
        c = dict.fromkeys(CHECKS, True)
        check = BlockCheck(i, c)
        reports.append(check)
        block = item
        if not isinstance(item, Block):
            try:
                block = decode_block(bytes(item))
            except (RLError, TypeError) as exc:
                for name in CHECKS:
                    c[name] = False
                check.notes.append(f"undecodable: {exc}")
                prev = None
                continue
        h = block.header
        c["height"] = h.height == i and h.version == BLOCK_VERSION
        if i == 0:
            same = block == expected_genesis
            c["hash_link"] = c["seal"] = c["proposer"] = c["merkle_root"] = same
            if not same:
                check.notes.append("genesis block does not match genesis config")
        else:
            c["hash_link"] = prev is not None and h.prev_hash == prev.hash
            c["merkle_root"] = h.tx_merkle_root == merkle_root(list(block.tx_hashes))
            c["seal"] = h.seal_valid(genesis.chain_id)
            c["proposer"] = h.proposer == genesis.proposer_for(h.height)
            c["timestamp"] = prev is None or h.timestamp >= prev.header.timestamp
            check.bad_txs = [k for k, tx in enumerate(block.transactions)
                             if not tx.verify(genesis.chain_id)]
            c["tx_signatures"] = not check.bad_txs
        prev = block
    return ChainReport(reports)
