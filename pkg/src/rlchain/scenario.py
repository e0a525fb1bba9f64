"""In-process chain driver and the reference refurbishing scenario.

``LocalChain`` runs the same admission/seal path as the node, without
sockets or threads, which is what tests, benchmarks and the demo script use.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from rlchain.block import BLOCK_VERSION, Block, BlockHeader, GenesisConfig, genesis_block
from rlchain.crypto import Keypair
from rlchain.encoding import sha256
from rlchain.errors import RLError
from rlchain.ledger import LedgerState, seal_block
from rlchain.merkle import merkle_root
from rlchain.model import Classification, ComponentType, EventResult, EventType, Role
from rlchain.offchain import OffchainStore, anchor_toc
from rlchain.tx import (
    AnchorToc,
    ClassifyDevice,
    ComponentSpec,
    Payload,
    RecordEvent,
    RegisterDevice,
    RegisterStakeholder,
    Replacement,
    Transaction,
    make_tx,
    tx_hash,
)

DEMO_CHAIN_ID = 0x524C  # "RL"
DEMO_GENESIS_TIME = 1_700_000_000


@dataclass
class LocalChain:
    genesis: GenesisConfig
    validators: list[Keypair]
    state: LedgerState = field(init=False)
    blocks: list[Block] = field(init=False)
    pending: list[Transaction] = field(default_factory=list)
    rejected: dict[bytes, RLError] = field(default_factory=dict)
    clock: int = DEMO_GENESIS_TIME

    def __post_init__(self):
        self.state = LedgerState.from_genesis(self.genesis)
        self.blocks = [genesis_block(self.genesis)]

    def submit(self, tx: Transaction) -> bytes:
        self.pending.append(tx)
        return tx_hash(tx)

    def seal(self, allow_empty: bool = False) -> Optional[Block]:
        height = self.state.height + 1
        proposer = self.genesis.proposer_for(height)
        key = next(k for k in self.validators if k.public == proposer)
        self.clock += 1
        pending, self.pending = self.pending, []
        block = seal_block(pending, self.state, key, allow_empty=allow_empty, timestamp=self.clock,
                           on_reject=lambda tx, exc: self.rejected.__setitem__(tx_hash(tx), exc))
        if block is not None:
            self.blocks.append(block)
        return block

    def run(self, tx: Transaction) -> Transaction:
        """Submit and seal one transaction; raise its rejection if any."""
        h = self.submit(tx)
        self.seal()
        if h in self.rejected:
            raise self.rejected[h]
        return tx


@dataclass
class Participant:
    name: str
    key: Keypair
    role: Optional[Role]
    store: OffchainStore
    chain_id: int
    nonce: int = 0
    anchored: int = 0

    @property
    def id(self) -> bytes:
        return self.key.public

    def tx(self, payload: Payload) -> Transaction:
        self.nonce += 1
        return make_tx(payload, self.key, self.nonce, self.chain_id)

    def attach(self, key: str, report: dict) -> bytes:
        """Store a report, add it to this participant's TOC, return its address."""
        data = json.dumps(report, sort_keys=True).encode()
        address, _ = self.store.put_and_index(self.key, key, data)
        return address

    def event(self, serial: str, kind: EventType, *, counterparty: Optional[bytes] = None,
              result: EventResult = EventResult.NA, replacement: Optional[Replacement] = None,
              report: Optional[dict] = None) -> Transaction:
        seq_hint = self.nonce + 1
        detail = self.attach(f"{kind.name.lower()}/{serial}/{seq_hint}",
                             report or {"event": kind.name, "serial": serial, "by": self.name,
                                       "result": result.name, "n": seq_hint})
        return self.tx(RecordEvent(serial, kind, counterparty, result, detail, replacement))

    def classify(self, serial: str, classification: Classification) -> Transaction:
        detail = self.attach(f"classification/{serial}",
                             {"event": "CLASSIFICATION", "serial": serial,
                              "classification": classification.name, "by": self.name})
        return self.tx(ClassifyDevice(serial, classification, detail))

    def anchor(self) -> Transaction:
        toc = self.store.toc(self.id)
        self.nonce += 1
        tx = anchor_toc(self.key, toc, self.anchored, self.nonce, self.chain_id)
        self.anchored = len(toc)
        return tx


def demo_bom(serial: str) -> tuple[ComponentSpec, ...]:
    return tuple(
        ComponentSpec(ct, f"{serial}-{ct.name}", sha256(f"{serial}/{ct.name}/spec".encode()))
        for ct in ComponentType
    )


@dataclass
class Demo:
    chain: LocalChain
    registrar: Participant
    people: dict[str, Participant]
    serial: str
    stores: list[OffchainStore]

    def __getitem__(self, name: str) -> Participant:
        return self.people[name]

    def names(self) -> dict[bytes, str]:
        return {p.id: p.name for p in self.people.values()}


DEMO_CAST = (
    ("manufacturer", Role.MANUFACTURER),
    ("retailer", Role.RETAILER),
    ("logistics", Role.THIRD_PARTY_LOGISTICS),
    ("refurbisher", Role.REFURBISHER),
    ("customer", Role.CUSTOMER),
)


def demo_genesis(registrar: Keypair, validators: list[Keypair]) -> GenesisConfig:
    return GenesisConfig(DEMO_CHAIN_ID, tuple(v.public for v in validators),
                         (registrar.public,), DEMO_GENESIS_TIME)


def setup_demo(root: str | Path, serial: str = "PHONE-0001", n_validators: int = 1) -> Demo:
    """Genesis, five registered stakeholders and one registered device."""
    root = Path(root)
    validators = [Keypair.from_seed(f"validator-{i}") for i in range(n_validators)]
    reg_key = Keypair.from_seed("registrar")
    genesis = demo_genesis(reg_key, validators)
    chain = LocalChain(genesis, validators)
    stores = []

    def participant(name: str, key: Keypair, role):
        store = OffchainStore(root / name)
        stores.append(store)
        return Participant(name, key, role, store, genesis.chain_id)

    registrar = participant("registrar", reg_key, None)
    people = {name: participant(name, Keypair.from_seed(name), role) for name, role in DEMO_CAST}
    for name, role in DEMO_CAST:
        chain.submit(registrar.tx(RegisterStakeholder(people[name].id, role, name.title())))
    chain.seal()
    maker = people["manufacturer"]
    chain.run(maker.tx(RegisterDevice(serial, "RL-Phone X", maker.id, demo_bom(serial))))
    return Demo(chain, registrar, people, serial, stores)


def refurbish_pipeline(demo: Demo, *, skip_wipe: bool = False) -> list[Transaction]:
    """Collection -> 3PL -> refurbisher -> processing -> retailer -> sale."""
    s = demo.serial
    ret, tpl, ref, cust = demo["retailer"], demo["logistics"], demo["refurbisher"], demo["customer"]
    battery = f"{s}-{ComponentType.BATTERY.name}"
    new_battery = ComponentSpec(ComponentType.BATTERY, f"{s}-BATTERY-R1", sha256(b"replacement battery spec"))
    steps = [
        ret.event(s, EventType.COLLECTION, counterparty=cust.id),
        ret.event(s, EventType.CUSTODY_TRANSFER, counterparty=tpl.id),
        tpl.event(s, EventType.CUSTODY_TRANSFER, counterparty=ref.id),
        ref.event(s, EventType.INSPECTION, result=EventResult.PASS),
        ref.event(s, EventType.PHYSICAL_CONDITION_ANALYSIS, result=EventResult.PASS),
    ]
    if not skip_wipe:
        steps.append(ref.event(s, EventType.DATA_WIPE, result=EventResult.PASS,
                               report={"event": "DATA_WIPE", "serial": s, "result": "PASS",
                                       "method": "factory reset and storage crypto-erase"}))
    steps += [
        ref.event(s, EventType.FUNCTIONAL_TEST, result=EventResult.FAIL),
        ref.event(s, EventType.COMPONENT_REPLACEMENT, replacement=Replacement(battery, new_battery)),
        ref.event(s, EventType.CUSTOMIZATION_REMOVAL),
        ref.event(s, EventType.FUNCTIONAL_TEST, result=EventResult.PASS),
        ref.classify(s, Classification.REFURBISHED),
        ref.event(s, EventType.CUSTODY_TRANSFER, counterparty=ret.id),
        ret.event(s, EventType.SALE, counterparty=cust.id),
    ]
    return steps


def run_demo(root: str | Path, serial: str = "PHONE-0001", txs_per_block: int = 3) -> Demo:
    """Full scenario, ending with every stakeholder anchoring its TOC."""
    demo = setup_demo(root, serial)
    steps = refurbish_pipeline(demo)
    for i in range(0, len(steps), txs_per_block):
        for tx in steps[i:i + txs_per_block]:
            demo.chain.submit(tx)
        demo.chain.seal()
    for p in demo.people.values():
        if len(p.store.toc(p.id)) > p.anchored:
            demo.chain.submit(p.anchor())
    demo.chain.seal()
    if demo.chain.rejected:
        raise RuntimeError(f"demo transactions rejected: {list(demo.chain.rejected.values())}")
    return demo


def busy_chain(n_blocks: int, n_validators: int = 3, txs_per_block: int = 2) -> LocalChain:
    """A chain of ``n_blocks`` blocks after genesis, every block non-empty.

    Filler traffic: the registrar enrols new stakeholders and each one
    anchors a (synthetic) TOC root in the following block.
    """
    validators = [Keypair.from_seed(f"validator-{i}") for i in range(n_validators)]
    reg = Keypair.from_seed("registrar")
    genesis = demo_genesis(reg, validators)
    chain = LocalChain(genesis, validators)
    reg_nonce = 0
    newcomers: list[Keypair] = []
    roles = [r for r in Role]
    for b in range(n_blocks):
        fresh = []
        for t in range(txs_per_block):
            if newcomers:
                k = newcomers.pop()
                chain.submit(make_tx(AnchorToc(1, sha256(k.public)), k, 1, genesis.chain_id))
                continue
            k = Keypair.from_seed(f"busy-{b}-{t}")
            reg_nonce += 1
            chain.submit(make_tx(RegisterStakeholder(k.public, roles[(b + t) % len(roles)], f"actor {b}.{t}"),
                                 reg, reg_nonce, genesis.chain_id))
            fresh.append(k)
        newcomers = fresh
        chain.seal(allow_empty=True)
    if chain.rejected:
        raise RuntimeError(f"filler transactions rejected: {list(chain.rejected.values())}")
    return chain


# -- fault injection ---------------------------------------------------------------
# These deliberately bypass the registry or edit persisted data, to show that
# the auditor catches what a misbehaving sealer or storage layer lets through.

def bypass_seal(chain: LocalChain, txs: list[Transaction]) -> Block:
    """Seal ``txs`` onto ``chain`` without validating them against the registry.

    ``chain.state`` is not advanced, so after this only further bypass
    seals make sense on the same chain.
    """
    prev = chain.blocks[-1]
    height = prev.height + 1
    key = next(k for k in chain.validators if k.public == chain.genesis.proposer_for(height))
    chain.clock += 1
    header = BlockHeader(BLOCK_VERSION, height, prev.hash, merkle_root([tx_hash(t) for t in txs]),
                         max(chain.clock, prev.header.timestamp), key.public)
    block = Block(header.sealed(key, chain.genesis.chain_id), tuple(txs))
    chain.blocks.append(block)
    return block


def inject_skipped_wipe(root: str | Path, serial: str = "PHONE-0001") -> Demo:
    """Full pipeline minus DATA_WIPE, forced onto the chain past the registry."""
    demo = setup_demo(root, serial)
    steps = refurbish_pipeline(demo, skip_wipe=True)
    for i in range(0, len(steps), 3):
        bypass_seal(demo.chain, steps[i:i + 3])
    bypass_seal(demo.chain, [p.anchor() for p in demo.people.values()
                             if len(p.store.toc(p.id)) > p.anchored])
    return demo


def detail_of(demo: Demo, kind: EventType) -> tuple[bytes, Participant]:
    """Detail record address and author of the first ``kind`` event on the demo device."""
    for block in demo.chain.blocks:
        for tx in block.transactions:
            p = tx.payload
            if getattr(p, "device_serial", None) != demo.serial:
                continue
            if getattr(p, "event_type", EventType.CLASSIFICATION) == kind:
                owner = next(x for x in demo.people.values() if x.id == tx.sender)
                return p.detail_hash, owner
    raise KeyError(kind)


def inject_tampered_report(demo: Demo, kind: EventType = EventType.DATA_WIPE) -> bytes:
    """Flip one byte of the stored off-chain report for ``kind``; return its address."""
    address, owner = detail_of(demo, kind)
    path = owner.store.cas.path_for(address)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0x01
    path.write_bytes(bytes(data))
    return address


def inject_forged_signature(demo: Demo, kind: EventType = EventType.SALE) -> list[Block]:
    """Chain copy where the ``kind`` transaction is re-signed by a key that is not its sender."""
    forger = Keypair.from_seed("forger")
    out = []
    for block in demo.chain.blocks:
        txs = list(block.transactions)
        for i, tx in enumerate(txs):
            if getattr(tx.payload, "event_type", None) == kind:
                txs[i] = replace(tx, signature=forger.sign(tx.signing_message(demo.chain.genesis.chain_id)))
        out.append(Block(block.header, tuple(txs)))
    return out
