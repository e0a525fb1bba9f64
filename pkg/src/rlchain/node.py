"""Node daemon: block persistence, transaction admission, sealing loop and
a JSON-over-HTTP query API bound to a local socket.

Endpoints (all responses are JSON objects carrying ``height``, the committed
height they reflect)::

    POST /tx                          {"tx": "<hex>"} -> accepted/rejected
    GET  /tx/<hash>                   pending | committed | dropped | unknown
    GET  /status
    GET  /genesis
    GET  /block/<height>
    GET  /account/<key hex>           last committed and pending nonce
    GET  /device/<serial>             current device record
    GET  /device/<serial>/history
    GET  /device/<serial>/compliance  custody report from raw blocks
    GET  /stakeholder/<key hex>/stats
    GET  /record/<hash>               off-chain record bytes as hex
    GET  /verify                      whole-chain verification report

Queries never mutate state; only sealing does.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import unquote

from rlchain.audit import ChainAudit
from rlchain.block import Block, GenesisConfig, decode_block, genesis_block
from rlchain.blockstore import BlockStore
from rlchain.crypto import Keypair
from rlchain.encoding import HASH_LEN, KEY_LEN, parse_hex
from rlchain.errors import CorruptChain, NotFound, RLError, SerializationError, StaleNonce
from rlchain.keystore import load_key_file
from rlchain.ledger import LedgerState, seal_block, verify_chain
from rlchain.offchain import OffchainStore
from rlchain.registry import device_to_json, event_to_json
from rlchain.tx import Transaction, deserialize, tx_hash, tx_to_json

log = logging.getLogger(__name__)

DATA_LAYOUT_VERSION = "1"


@dataclass
class NodeConfig:
    data_dir: Path
    genesis_path: Path
    listen: str = "127.0.0.1:7545"
    validator_key_path: Optional[Path] = None
    seal_interval_ms: int = 500
    allow_empty_blocks: bool = False
    extra_stores: list[Path] = field(default_factory=list)
    fsync: bool = True

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)


class Node:
    def __init__(self, config: NodeConfig):
        self.config = config
        self.genesis = GenesisConfig.load(config.genesis_path)
        self.key: Optional[Keypair] = None
        if config.validator_key_path is not None:
            self.key = load_key_file(config.validator_key_path)
            if self.key.public not in self.genesis.validators:
                raise ValueError("validator key is not listed in genesis")
        data = Path(config.data_dir)
        data.mkdir(parents=True, exist_ok=True)
        version = data / "VERSION"
        if version.exists() and version.read_text().strip() != DATA_LAYOUT_VERSION:
            raise ValueError(f"unsupported data directory layout {version.read_text().strip()!r}")
        version.write_text(DATA_LAYOUT_VERSION + "\n")

        self.store = OffchainStore(data)
        self.stores = [self.store] + [OffchainStore(p) for p in config.extra_stores]
        self.blockstore = BlockStore(data, fsync=config.fsync)
        self.blocks: list[Block] = []
        self.state = self._recover()

        self.pending: deque[Transaction] = deque()
        self._pending_nonce: dict[bytes, int] = {}
        self._pending_hashes: set[bytes] = set()
        self._inflight: set[bytes] = set()
        self.dropped: dict[bytes, str] = {}
        self.submitted_at: dict[bytes, float] = {}
        self.latencies: list[float] = []
        self.apply_times: list[float] = []
        self._admit_lock = threading.Lock()
        self._seal_lock = threading.Lock()
        self._committed = threading.Condition()
        self._stop = threading.Event()
        self._closing = False
        self._sealer: Optional[threading.Thread] = None
        self._server: Optional[ThreadingHTTPServer] = None
        self._server_thread: Optional[threading.Thread] = None

    # -- startup ------------------------------------------------------------

    def _recover(self) -> LedgerState:
        raw = self.blockstore.read_all()
        if not raw:
            g = genesis_block(self.genesis)
            self.blockstore.append(g.serialize())
            raw = [g.serialize()]
        report = verify_chain(raw, self.genesis)
        if not report.ok:
            raise CorruptChain(f"block log fails verification at {report.failing_blocks()}", report)
        self.blocks = [decode_block(r) for r in raw]
        state = LedgerState.from_genesis(self.genesis)
        for block in self.blocks[1:]:
            state.apply_block(block)
        log.info("recovered %d blocks, state digest %s", len(self.blocks), state.state_digest().hex())
        return state

    # -- admission ----------------------------------------------------------

    def submit(self, raw: bytes | str) -> dict:
        try:
            if isinstance(raw, str):
                raw = parse_hex(raw.strip(), what="tx")
            tx = deserialize(raw)
        except RLError as exc:
            return {"status": "rejected", "tx_hash": None, "reason": exc.code,
                    "message": exc.message, "height": self.state.height}
        h = tx_hash(tx)
        with self._admit_lock:
            reply = {"tx_hash": h.hex(), "height": self.state.height}
            if self._closing:
                return {**reply, "status": "rejected", "reason": "SHUTTING_DOWN", "message": "node is stopping"}
            if h in self.state.committed or h in self._pending_hashes:
                return {**reply, "status": "rejected", "reason": "DUPLICATE", "message": "already known"}
            try:
                self.state.check_admissible(tx)
                floor = self._pending_nonce.get(tx.sender)
                if floor is not None and tx.nonce <= floor:
                    raise StaleNonce(f"nonce {tx.nonce} <= pending {floor}")
            except RLError as exc:
                return {**reply, "status": "rejected", "reason": exc.code, "message": exc.message}
            self.pending.append(tx)
            self._pending_hashes.add(h)
            self._pending_nonce[tx.sender] = tx.nonce
            self.submitted_at[h] = time.perf_counter()
        return {**reply, "status": "accepted", "reason": None}

    # -- sealing ------------------------------------------------------------

    def my_turn(self) -> bool:
        return self.key is not None and self.genesis.proposer_for(self.state.height + 1) == self.key.public

    def seal_once(self) -> Optional[Block]:
        if not self.my_turn():
            return None
        with self._seal_lock:
            with self._admit_lock:
                batch = list(self.pending)
                self._inflight = set(self._pending_hashes)
                self.pending.clear()
                self._pending_hashes.clear()
                self._pending_nonce.clear()
            try:
                return self._seal_batch(batch)
            finally:
                self._inflight = set()

    def _seal_batch(self, batch: list[Transaction]) -> Optional[Block]:
        if not batch and not self.config.allow_empty_blocks:
            return None

        def rejected(tx, exc):
            self.dropped[tx_hash(tx)] = f"{exc.code}: {exc.message}"

        def applied(tx, dt):
            self.apply_times.append(dt)

        # held across seal and persist so readers never see state ahead of the log
        with self.state.lock:
            block = seal_block(batch, self.state, self.key, allow_empty=self.config.allow_empty_blocks,
                               on_reject=rejected, on_apply=applied)
            if block is None:
                return None
            self.blockstore.append(block.serialize())
            self.blocks.append(block)
        now = time.perf_counter()
        for h in block.tx_hashes:
            t0 = self.submitted_at.pop(h, None)
            if t0 is not None:
                self.latencies.append(now - t0)
        for tx in batch:
            self.submitted_at.pop(tx_hash(tx), None)
        with self._committed:
            self._committed.notify_all()
        log.debug("sealed block %d with %d txs", block.height, len(block.transactions))
        return block

    def _seal_loop(self) -> None:
        interval = self.config.seal_interval_ms / 1000.0
        while not self._stop.wait(interval):
            try:
                self.seal_once()
            except Exception:  # keep the sealer alive; the failing batch is logged
                log.exception("sealing failed")

    def wait_for(self, h: bytes, timeout: float = 10.0) -> Optional[int]:
        deadline = time.monotonic() + timeout
        with self._committed:
            while True:
                if h in self.state.committed:
                    return self.state.committed[h]
                if h in self.dropped:
                    return None
                left = deadline - time.monotonic()
                if left <= 0:
                    return None
                self._committed.wait(left)

    # -- lifecycle ----------------------------------------------------------

    def start(self, serve_http: bool = True) -> "Node":
        if self.key is not None:
            self._sealer = threading.Thread(target=self._seal_loop, name="sealer", daemon=True)
            self._sealer.start()
        if serve_http:
            self._server = ThreadingHTTPServer(self.config.host_port, _handler_for(self))
            self._server.daemon_threads = True
            self._server_thread = threading.Thread(target=self._server.serve_forever, name="http", daemon=True)
            self._server_thread.start()
        return self

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        with self._admit_lock:
            self._closing = True
        self._stop.set()
        if self._sealer is not None:
            self._sealer.join()
        # drain: whatever was admitted goes into one final whole block
        if self.pending:
            self.seal_once()
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
        self.blockstore.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()

    # -- queries ------------------------------------------------------------

    def snapshot_blocks(self) -> list[Block]:
        with self.state.lock:
            return list(self.blocks)

    def q_status(self) -> dict:
        with self.state.lock:
            return {"height": self.state.height, "chain_id": self.genesis.chain_id,
                    "tip_hash": self.state.tip_hash.hex(), "pending": len(self.pending),
                    "state_digest": self.state.state_digest().hex(),
                    "validator": self.key.public.hex() if self.key else None}

    def q_tx(self, h: bytes) -> dict:
        with self.state.lock:
            height = self.state.height
            if h in self.state.committed:
                return {"height": height, "status": "committed", "block": self.state.committed[h]}
        if h in self.dropped:
            return {"height": height, "status": "dropped", "reason": self.dropped[h]}
        if h in self._pending_hashes or h in self._inflight:
            return {"height": height, "status": "pending"}
        return {"height": height, "status": "unknown"}

    def q_block(self, height: int) -> dict:
        with self.state.lock:
            if not 0 <= height < len(self.blocks):
                raise NotFound(f"block {height}")
            b = self.blocks[height]
            tip = self.state.height
        hd = b.header
        return {"height": tip, "block": {
            "height": hd.height, "version": hd.version, "hash": b.hash.hex(),
            "prev_hash": hd.prev_hash.hex(), "tx_merkle_root": hd.tx_merkle_root.hex(),
            "timestamp": hd.timestamp, "proposer": hd.proposer.hex(), "seal": hd.seal.hex(),
            "transactions": [tx_to_json(t) for t in b.transactions],
        }, "hex": b.serialize().hex()}

    def q_account(self, key: bytes) -> dict:
        with self.state.lock:
            return {"height": self.state.height, "last_nonce": self.state.nonces.get(key),
                    "pending_nonce": self._pending_nonce.get(key),
                    "registered": key in self.state.registry.stakeholders}

    def q_device(self, serial: str) -> dict:
        with self.state.lock:
            return {"height": self.state.height,
                    "device": device_to_json(self.state.registry.get_device(serial))}

    def q_history(self, serial: str) -> dict:
        with self.state.lock:
            events = self.state.registry.get_device_history(serial)
            return {"height": self.state.height, "device_serial": serial,
                    "events": [event_to_json(e) for e in events]}

    def q_compliance(self, serial: str) -> dict:
        blocks = self.snapshot_blocks()
        report = ChainAudit(blocks, self.genesis, self.stores).report(serial)
        return {"height": blocks[-1].height, "report": report.to_json()}

    def q_stats(self, key: bytes) -> dict:
        with self.state.lock:
            return {"height": self.state.height,
                    "stats": self.state.registry.get_stakeholder_stats(key).to_json()}

    def q_record(self, address: bytes) -> dict:
        last: RLError = NotFound(f"record {address.hex()}")
        for store in self.stores:
            try:
                data = store.cas.get_record(address)
            except NotFound:
                continue
            except RLError as exc:
                last = exc
                continue
            return {"height": self.state.height, "address": address.hex(), "data": data.hex()}
        raise last

    def q_verify(self) -> dict:
        blocks = self.snapshot_blocks()
        return {"height": blocks[-1].height, "report": verify_chain(blocks, self.genesis).to_json()}


_HTTP_STATUS = {"NOT_FOUND": 404}


def _handler_for(node: Node):
    class Handler(BaseHTTPRequestHandler):
        server_version = "rlchain-node/1"

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

        def _send(self, status: int, obj: dict) -> None:
            body = json.dumps(obj, sort_keys=True).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _error(self, exc: RLError) -> None:
            self._send(_HTTP_STATUS.get(exc.code, 400),
                       {"error": exc.code, "message": exc.message, "height": node.state.height})

        def do_POST(self):
            if self.path.rstrip("/") != "/tx":
                return self._error(NotFound(self.path))
            length = int(self.headers.get("Content-Length") or 0)
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
                raw = body["tx"]
                if not isinstance(raw, str):
                    raise TypeError
            except (ValueError, KeyError, TypeError):
                return self._send(400, {"status": "rejected", "tx_hash": None, "reason": "SERIALIZATION_ERROR",
                                        "message": "body must be {\"tx\": \"<hex>\"}",
                                        "height": node.state.height})
            reply = node.submit(raw)
            self._send(200 if reply["status"] == "accepted" else 400, reply)

        def do_GET(self):
            parts = [unquote(p) for p in self.path.split("?")[0].strip("/").split("/")]
            try:
                self._send(200, self._route(parts))
            except RLError as exc:
                self._error(exc)
            except (ValueError, IndexError):
                self._error(SerializationError(f"bad request path {self.path}"))

        def _route(self, parts: list[str]) -> dict:
            head = parts[0] if parts else ""
            if head == "status" and len(parts) == 1:
                return node.q_status()
            if head == "genesis" and len(parts) == 1:
                return {"height": node.state.height, "genesis": node.genesis.to_json()}
            if head == "verify" and len(parts) == 1:
                return node.q_verify()
            if head == "tx" and len(parts) == 2:
                return node.q_tx(parse_hex(parts[1], HASH_LEN, "tx hash"))
            if head == "block" and len(parts) == 2:
                return node.q_block(int(parts[1]))
            if head == "account" and len(parts) == 2:
                return node.q_account(parse_hex(parts[1], KEY_LEN, "key"))
            if head == "record" and len(parts) == 2:
                return node.q_record(parse_hex(parts[1], HASH_LEN, "address"))
            if head == "stakeholder" and len(parts) == 3 and parts[2] == "stats":
                return node.q_stats(parse_hex(parts[1], KEY_LEN, "stakeholder id"))
            if head == "device" and len(parts) == 2:
                return node.q_device(parts[1])
            if head == "device" and len(parts) == 3 and parts[2] == "history":
                return node.q_history(parts[1])
            if head == "device" and len(parts) == 3 and parts[2] == "compliance":
                return node.q_compliance(parts[1])
            raise NotFound(f"no endpoint /{'/'.join(parts)}")

    return Handler


def serve(config: NodeConfig) -> Node:
    """Start a node (sealer + HTTP API) and return it; call ``stop()`` to shut down."""
    return Node(config).start()
