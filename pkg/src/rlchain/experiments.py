"""Latency benchmark and tamper sweep, shared by scripts/ and the acceptance tests."""
from __future__ import annotations

import random
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from rlchain.client import NodeClient
from rlchain.crypto import Keypair
from rlchain.keystore import Keystore
from rlchain.ledger import verify_chain
from rlchain.model import Role
from rlchain.node import Node, NodeConfig
from rlchain.scenario import busy_chain, demo_bom, demo_genesis
from rlchain.tx import RegisterDevice, RegisterStakeholder, Transaction, canonical_serialize, make_tx, tx_hash


@dataclass
class LatencyConfig:
    n_txs: int = 1000
    seal_interval_ms: int = 10
    n_makers: int = 12
    fsync: bool = True
    via_http: bool = True
    # pause between submissions; 0 submits as fast as the client can
    pace_ms: float = 0.0


@dataclass
class LatencyResult:
    config: LatencyConfig
    committed: int
    dropped: int
    blocks: int
    median_ms: float
    p95_ms: float
    max_ms: float
    mean_apply_ms: float
    wall_s: float

    def summary(self) -> str:
        c = self.config
        return (f"{self.committed}/{c.n_txs} committed in {self.blocks} blocks, "
                f"seal interval {c.seal_interval_ms} ms, fsync={c.fsync}, http={c.via_http}: "
                f"submit-to-commit median {self.median_ms:.2f} ms, p95 {self.p95_ms:.2f} ms, "
                f"max {self.max_ms:.2f} ms; mean validate+apply {self.mean_apply_ms:.3f} ms; "
                f"wall {self.wall_s:.1f} s")


def latency_workload(n_txs: int, n_makers: int, chain_id: int, registrar: Keypair) -> list[Transaction]:
    """Stakeholder enrolment followed by device registrations with full BOMs."""
    makers = [Keypair.from_seed(f"bench-maker-{i}") for i in range(n_makers)]
    txs = [make_tx(RegisterStakeholder(m.public, Role.MANUFACTURER, f"maker {i}"), registrar, i + 1, chain_id)
           for i, m in enumerate(makers)]
    nonces = [0] * n_makers
    k = 0
    while len(txs) < n_txs:
        i = k % n_makers
        nonces[i] += 1
        serial = f"BENCH-{k:05d}"
        txs.append(make_tx(RegisterDevice(serial, "bench model", makers[i].public, demo_bom(serial)),
                           makers[i], nonces[i], chain_id))
        k += 1
    return txs[:n_txs]


def latency_benchmark(cfg: LatencyConfig = LatencyConfig(), root: Optional[Path] = None) -> LatencyResult:
    with tempfile.TemporaryDirectory(prefix="rlbench-") as tmp:
        root = Path(root or tmp)
        ks = Keystore(root / "keys")
        validator = ks.create("validator")
        registrar = Keypair.from_seed("bench-registrar")
        genesis = demo_genesis(registrar, [validator])
        genesis.save(root / "genesis.json")
        txs = latency_workload(cfg.n_txs, cfg.n_makers, genesis.chain_id, registrar)

        node = Node(NodeConfig(root / "data", root / "genesis.json", "127.0.0.1:0", ks.path("validator"),
                               seal_interval_ms=cfg.seal_interval_ms, fsync=cfg.fsync))
        node.start(serve_http=cfg.via_http)
        try:
            client = NodeClient(node.address) if cfg.via_http else None
            t0 = time.perf_counter()
            for tx in txs:
                reply = client.submit(tx) if client else node.submit(canonical_serialize(tx))
                if reply["status"] != "accepted":
                    raise RuntimeError(f"benchmark tx refused at admission: {reply}")
                if cfg.pace_ms:
                    time.sleep(cfg.pace_ms / 1000)
            deadline = time.monotonic() + 30
            while node.pending and time.monotonic() < deadline:
                time.sleep(0.005)
            node.wait_for(tx_hash(txs[-1]), timeout=10)
            wall = time.perf_counter() - t0
        finally:
            node.stop()
        lat = sorted(x * 1000 for x in node.latencies)
        return LatencyResult(
            config=cfg,
            committed=len(lat),
            dropped=len(node.dropped),
            blocks=len(node.blocks) - 1,
            median_ms=statistics.median(lat) if lat else float("inf"),
            p95_ms=lat[int(0.95 * (len(lat) - 1))] if lat else float("inf"),
            max_ms=lat[-1] if lat else float("inf"),
            mean_apply_ms=statistics.fmean(node.apply_times) * 1000 if node.apply_times else float("inf"),
            wall_s=wall,
        )


@dataclass
class TamperResult:
    n_blocks: int
    flips: int
    flagged: int
    located: int
    wall_s: float
    misses: list[tuple[int, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.flagged == self.flips and self.located == self.flips

    def summary(self) -> str:
        return (f"{self.flips} single-bit flips over {self.n_blocks} blocks: flagged {self.flagged}, "
                f"first failing block correct {self.located}, wall {self.wall_s:.1f} s")


def tamper_sweep(n_flips: int = 10_000, n_blocks: int = 50, seed: int = 0) -> TamperResult:
    """Flip one random bit of one persisted block per trial and re-verify the whole chain.

    Genesis (index 0) is included in the target set.
    """
    chain = busy_chain(n_blocks)
    raw = [b.serialize() for b in chain.blocks]
    if not verify_chain(raw, chain.genesis).ok:
        raise RuntimeError("pristine fixture does not verify")
    rng = random.Random(seed)
    flagged = located = 0
    misses = []
    t0 = time.perf_counter()
    for _ in range(n_flips):
        i = rng.randrange(len(raw))
        bit = rng.randrange(len(raw[i]) * 8)
        mutated = bytearray(raw[i])
        mutated[bit // 8] ^= 1 << (bit % 8)
        trial = list(raw)
        trial[i] = bytes(mutated)
        report = verify_chain(trial, chain.genesis)
        if not report.ok:
            flagged += 1
            if report.failing_blocks()[0] == i:
                located += 1
                continue
        misses.append((i, bit))
    return TamperResult(len(raw) - 1, n_flips, flagged, located, time.perf_counter() - t0, misses)
