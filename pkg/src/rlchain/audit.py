"""Chain-of-custody reconstruction and compliance checking.

The auditor trusts nothing but raw blocks and the content stores it can
reach. Registry state is never consulted: every transaction in the chain,
including ones a well-behaved sealer would have refused, is walked in order
and each rule violation becomes a coded finding instead of an exception.

Verdicts:
    NON_COMPLIANT  any on-chain violation, bad signature, or off-chain data
                   that exists but no longer matches its anchor
    INDETERMINATE  only problem is off-chain data the auditor cannot reach
    COMPLIANT      nothing to report
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from rlchain.block import Block, GenesisConfig
from rlchain.encoding import ZERO_HASH
from rlchain.errors import IntegrityFailure, NotFound, RLError
from rlchain.ledger import ChainReport, verify_chain
from rlchain.model import (
    DEVICE_REGISTRARS,
    MANDATORY_STEPS,
    PERMISSIONS,
    PROCESSING_EVENTS,
    RELEASE_EVENTS,
    TRANSFER_TARGETS,
    Classification,
    ComponentType,
    DeviceState,
    EventResult,
    EventType,
    Role,
    TocAnchor,
)
from rlchain.offchain import OffchainStore, prove_membership, verify_membership
from rlchain.tx import (
    AnchorToc,
    ClassifyDevice,
    RecordEvent,
    RegisterDevice,
    RegisterStakeholder,
    Transaction,
    tx_hash,
)


class Verdict(str, Enum):
    COMPLIANT = "COMPLIANT"
    NON_COMPLIANT = "NON_COMPLIANT"
    INDETERMINATE = "INDETERMINATE"


class FindingCode(str, Enum):
    MISSING_WIPE = "MISSING_WIPE"
    BROKEN_CUSTODY = "BROKEN_CUSTODY"
    BAD_SIGNATURE = "BAD_SIGNATURE"
    UNANCHORED_RECORD = "UNANCHORED_RECORD"
    UNRESOLVABLE_RECORD = "UNRESOLVABLE_RECORD"
    LIFECYCLE_VIOLATION = "LIFECYCLE_VIOLATION"
    CLASSIFICATION_MISMATCH = "CLASSIFICATION_MISMATCH"


@dataclass(frozen=True)
class Finding:
    code: FindingCode
    seq: int
    detail: str

    def to_json(self) -> dict:
        return {"code": self.code.value, "seq": self.seq, "detail": self.detail}


EVENT_CHECKS = ("signature", "role", "custody", "lifecycle", "record_resolvable", "toc_membership")


@dataclass
class EventAudit:
    seq: int
    event_type: EventType
    actor: bytes
    counterparty: Optional[bytes]
    block_height: int
    tx_hash: bytes
    detail_hash: bytes
    checks: dict[str, Optional[bool]] = field(default_factory=lambda: dict.fromkeys(EVENT_CHECKS, True))

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "event_type": self.event_type.name,
            "actor": self.actor.hex(),
            "counterparty": self.counterparty.hex() if self.counterparty else None,
            "block_height": self.block_height,
            "tx_hash": self.tx_hash.hex(),
            "detail_hash": self.detail_hash.hex(),
            "checks": self.checks,
        }


@dataclass(frozen=True)
class CustodySpan:
    custodian: bytes
    role: Optional[Role]
    from_seq: int
    to_seq: int

    def to_json(self) -> dict:
        return {"custodian": self.custodian.hex(),
                "role": self.role.name if self.role else None,
                "from_seq": self.from_seq, "to_seq": self.to_seq}


@dataclass
class CustodyReport:
    device_serial: str
    registered_by: bytes
    events: list[EventAudit]
    custody_timeline: list[CustodySpan]
    findings: list[Finding]

    @property
    def verdict(self) -> Verdict:
        codes = {f.code for f in self.findings}
        if codes - {FindingCode.UNRESOLVABLE_RECORD}:
            return Verdict.NON_COMPLIANT
        if codes:
            return Verdict.INDETERMINATE
        return Verdict.COMPLIANT

    def codes(self) -> set[FindingCode]:
        return {f.code for f in self.findings}

    def to_json(self) -> dict:
        return {
            "device_serial": self.device_serial,
            "verdict": self.verdict.value,
            "registered_by": self.registered_by.hex(),
            "findings": [f.to_json() for f in self.findings],
            "custody_timeline": [s.to_json() for s in self.custody_timeline],
            "events": [e.to_json() for e in self.events],
        }


@dataclass
class _Device:
    serial: str
    registered_by: bytes
    original_manufacturer: bytes
    components: list[list]  # [type, serial, installed]
    state: DeviceState = DeviceState.REGISTERED
    custodian: bytes = b""
    history: list[tuple[EventType, EventResult]] = field(default_factory=list)
    audits: list[EventAudit] = field(default_factory=list)
    custodians: list[bytes] = field(default_factory=list)
    findings: list[Finding] = field(default_factory=list)


class ChainAudit:
    """One pass over a chain, reusable for any number of device reports."""

    def __init__(self, chain: Sequence[Block], genesis: GenesisConfig,
                 stores: Sequence[OffchainStore] = ()):
        self.genesis = genesis
        self.stores = list(stores)
        self.roles: dict[bytes, Role] = {}
        self.anchors: dict[bytes, list[TocAnchor]] = {}
        self.devices: dict[str, _Device] = {}
        self.orphans: list[tuple[int, str]] = []
        self._toc_cache: dict[bytes, list] = {}
        for block in chain[1:]:
            for tx in block.transactions:
                self._walk(tx, block.height)

    # -- pass over raw transactions --------------------------------------

    def _walk(self, tx: Transaction, height: int) -> None:
        p = tx.payload
        sig_ok = tx.verify(self.genesis.chain_id)
        if isinstance(p, RegisterStakeholder):
            if sig_ok and tx.sender in self.genesis.registrars and p.candidate not in self.roles:
                self.roles[p.candidate] = p.role
        elif isinstance(p, AnchorToc):
            prior = self.anchors.get(tx.sender, [])
            last = prior[-1].toc_length if prior else 0
            if sig_ok and tx.sender in self.roles and p.toc_length > last:
                self.anchors.setdefault(tx.sender, []).append(
                    TocAnchor(tx.sender, p.toc_length, p.toc_root, height))
        elif isinstance(p, RegisterDevice):
            if p.serial in self.devices:
                return
            dev = _Device(p.serial, tx.sender, p.original_manufacturer,
                          [[c.component_type, c.serial, True] for c in p.components],
                          custodian=tx.sender)
            self.devices[p.serial] = dev
            problems = []
            if not sig_ok:
                dev.findings.append(Finding(FindingCode.BAD_SIGNATURE, 0, "device registration signature invalid"))
            if self.roles.get(tx.sender) not in DEVICE_REGISTRARS:
                problems.append("registrant may not register devices")
            if self.roles.get(p.original_manufacturer) != Role.MANUFACTURER:
                problems.append("original manufacturer is not a registered MANUFACTURER")
            if sorted(c.component_type for c in p.components) != sorted(ComponentType):
                problems.append("bill of materials is not one component per type")
            for msg in problems:
                dev.findings.append(Finding(FindingCode.LIFECYCLE_VIOLATION, 0, "registration: " + msg))
        elif isinstance(p, (RecordEvent, ClassifyDevice)):
            dev = self.devices.get(p.device_serial)
            if dev is None:
                self.orphans.append((height, p.device_serial))
                return
            self._event(dev, tx, sig_ok, height)

    def _event(self, dev: _Device, tx: Transaction, sig_ok: bool, height: int) -> None:
        p = tx.payload
        classify = isinstance(p, ClassifyDevice)
        kind = EventType.CLASSIFICATION if classify else p.event_type
        counterparty = None if classify else p.counterparty
        result = EventResult.NA if classify else p.result
        seq = len(dev.audits)
        ea = EventAudit(seq, kind, tx.sender, counterparty, height, tx_hash(tx), p.detail_hash)
        dev.audits.append(ea)
        found: list[tuple[FindingCode, str, str]] = []

        def flag(code: FindingCode, check: str, detail: str) -> None:
            found.append((code, check, detail))

        if not sig_ok:
            flag(FindingCode.BAD_SIGNATURE, "signature", "transaction signature does not verify")
        if p.detail_hash == ZERO_HASH:
            flag(FindingCode.UNANCHORED_RECORD, "record_resolvable", "event carries no detail record")
        role = self.roles.get(tx.sender)
        history = [k for k, _ in dev.history]

        if classify:
            self._check_classification(dev, tx.sender, p, role, flag)
        else:
            if kind == EventType.CLASSIFICATION:
                flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", "classification without a classification value")
            elif role not in PERMISSIONS[kind]:
                flag(FindingCode.LIFECYCLE_VIOLATION, "role",
                     f"{role.name if role else 'unregistered sender'} may not record {kind.name}")
            if kind != EventType.COLLECTION and tx.sender != dev.custodian:
                flag(FindingCode.BROKEN_CUSTODY, "custody", "actor did not hold custody")
            if p.replacement is not None and kind != EventType.COMPONENT_REPLACEMENT:
                flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", "replacement data on a non-replacement event")
            if dev.state in (DeviceState.FINALIZED, DeviceState.RECYCLED):
                flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", f"event after device was {dev.state.name}")
            elif kind == EventType.COLLECTION:
                if dev.state != DeviceState.REGISTERED:
                    flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", "collection of an already collected device")
                self._check_counterparty(counterparty, {Role.CUSTOMER}, tx.sender, flag)
            elif kind == EventType.CUSTODY_TRANSFER:
                if dev.state not in (DeviceState.COLLECTED, DeviceState.IN_TRANSIT, DeviceState.PROCESSED):
                    flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", f"custody transfer while {dev.state.name}")
                self._check_counterparty(counterparty, TRANSFER_TARGETS, tx.sender, flag)
            elif kind in PROCESSING_EVENTS:
                if dev.state not in (DeviceState.COLLECTED, DeviceState.IN_PROCESS):
                    flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", f"{kind.name} while {dev.state.name}")
                elif EventType.INSPECTION not in history and kind != EventType.INSPECTION:
                    flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", f"{kind.name} before INSPECTION")
                if counterparty is not None:
                    flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", "processing event names a counterparty")
                if kind == EventType.FUNCTIONAL_TEST and result == EventResult.NA:
                    flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", "functional test without a result")
                if kind == EventType.COMPONENT_REPLACEMENT:
                    self._check_replacement(dev, p, flag)
            elif kind in RELEASE_EVENTS:
                if EventType.DATA_WIPE not in history:
                    flag(FindingCode.MISSING_WIPE, "lifecycle", f"{kind.name} without a prior DATA_WIPE")
                if dev.state != DeviceState.PROCESSED:
                    flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", f"{kind.name} while {dev.state.name}")
                self._check_counterparty(counterparty, set(Role) - {Role.GOVERNMENT}, tx.sender, flag)

        for code, check, detail in found:
            ea.checks[check] = False
            dev.findings.append(Finding(code, seq, detail))
        self._effect(dev, tx.sender, kind, counterparty, result, p)

    def _check_classification(self, dev, actor: bytes, p: ClassifyDevice, role, flag) -> None:
        if p.classification == Classification.NONE:
            flag(FindingCode.CLASSIFICATION_MISMATCH, "role", "classification value NONE")
        elif p.classification == Classification.REMANUFACTURED:
            if actor != dev.original_manufacturer:
                flag(FindingCode.CLASSIFICATION_MISMATCH, "role",
                     "REMANUFACTURED claimed by someone other than the original manufacturer")
        elif role not in PERMISSIONS[EventType.CLASSIFICATION]:
            flag(FindingCode.CLASSIFICATION_MISMATCH, "role",
                 f"{role.name if role else 'unregistered sender'} may not classify")
        if actor != dev.custodian:
            flag(FindingCode.BROKEN_CUSTODY, "custody", "actor did not hold custody")
        if dev.state != DeviceState.IN_PROCESS:
            flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", f"classification while {dev.state.name}")
        seen = {k for k, _ in dev.history}
        if EventType.DATA_WIPE not in seen:
            flag(FindingCode.MISSING_WIPE, "lifecycle", "classified without DATA_WIPE")
        for step in sorted(MANDATORY_STEPS - {EventType.DATA_WIPE}):
            if step not in seen:
                flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", f"classified without {step.name}")
        passed = False
        for k, r in dev.history:
            if k in (EventType.REPAIR, EventType.COMPONENT_REPLACEMENT):
                passed = False
            elif k == EventType.FUNCTIONAL_TEST and r == EventResult.PASS:
                passed = True
        if not passed:
            flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle",
                 "no passing functional test after the last repair")

    def _check_counterparty(self, who, allowed, actor, flag) -> None:
        role = self.roles.get(who) if who is not None else None
        if role is None:
            flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", "counterparty missing or unregistered")
        elif role not in allowed or who == actor:
            flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", f"counterparty {role.name} not allowed here")

    @staticmethod
    def _check_replacement(dev: _Device, p: RecordEvent, flag) -> None:
        rep = p.replacement
        if rep is None:
            flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", "component replacement without components")
            return
        old = [c for c in dev.components if c[1] == rep.old_serial and c[2]]
        if not old:
            flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", f"no installed component {rep.old_serial!r}")
        elif old[0][0] != rep.new.component_type:
            flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", "replacement changes component type")
        if not rep.new.serial or any(c[1] == rep.new.serial for c in dev.components):
            flag(FindingCode.LIFECYCLE_VIOLATION, "lifecycle", "replacement serial already used")

    def _effect(self, dev: _Device, actor, kind, counterparty, result, p) -> None:
        if kind == EventType.COLLECTION:
            dev.state, dev.custodian = DeviceState.COLLECTED, actor
        elif kind == EventType.CUSTODY_TRANSFER:
            if counterparty is not None:
                dev.custodian = counterparty
            if dev.state != DeviceState.PROCESSED:
                dev.state = (DeviceState.IN_TRANSIT
                             if self.roles.get(counterparty) == Role.THIRD_PARTY_LOGISTICS
                             else DeviceState.COLLECTED)
        elif kind in PROCESSING_EVENTS:
            dev.state = DeviceState.IN_PROCESS
            rep = getattr(p, "replacement", None)
            if kind == EventType.COMPONENT_REPLACEMENT and rep is not None:
                for c in dev.components:
                    if c[1] == rep.old_serial:
                        c[2] = False
                dev.components.append([rep.new.component_type, rep.new.serial, True])
        elif kind == EventType.CLASSIFICATION:
            dev.state = DeviceState.PROCESSED
        elif kind in RELEASE_EVENTS:
            dev.state = DeviceState.FINALIZED
            if counterparty is not None:
                dev.custodian = counterparty
        dev.history.append((kind, result))
        dev.custodians.append(dev.custodian)

    # -- off-chain checks ---------------------------------------------------

    def _resolve(self, address: bytes) -> Optional[FindingCode]:
        tampered = False
        for store in self.stores:
            try:
                store.cas.get_record(address)
                return None
            except IntegrityFailure:
                tampered = True
            except NotFound:
                continue
        return FindingCode.UNANCHORED_RECORD if tampered else FindingCode.UNRESOLVABLE_RECORD

    def _tocs(self, owner: bytes) -> list:
        if owner not in self._toc_cache:
            tocs = []
            for store in self.stores:
                if store.has_toc(owner):
                    try:
                        tocs.append(store.toc(owner))
                    except RLError:
                        tocs.append(None)  # unparseable TOC file: present but corrupt
            self._toc_cache[owner] = tocs
        return self._toc_cache[owner]

    def _membership(self, actor: bytes, address: bytes) -> tuple[Optional[FindingCode], str]:
        anchors = self.anchors.get(actor)
        if not anchors:
            return FindingCode.UNANCHORED_RECORD, "actor never anchored a TOC"
        anchor = anchors[-1]
        tocs = self._tocs(actor)
        if not tocs:
            return FindingCode.UNRESOLVABLE_RECORD, "actor TOC not reachable"
        for toc in tocs:
            if toc is None:
                continue
            idx = toc.find(address, anchor.toc_length)
            if idx is None:
                continue
            try:
                proof = prove_membership(toc, idx, anchor)
            except RLError:
                continue
            if verify_membership(toc.entries[idx], proof, anchor):
                return None, ""
        return FindingCode.UNANCHORED_RECORD, "record not provably in the actor's anchored TOC"

    # -- reports -----------------------------------------------------------

    def report(self, serial: str) -> CustodyReport:
        dev = self.devices.get(serial)
        if dev is None:
            raise NotFound(f"device {serial!r} not on chain")
        findings = list(dev.findings)
        for ea in dev.audits:
            if ea.detail_hash == ZERO_HASH:
                ea.checks["toc_membership"] = False
                continue
            code = self._resolve(ea.detail_hash)
            if code is not None:
                ea.checks["record_resolvable"] = None if code == FindingCode.UNRESOLVABLE_RECORD else False
                what = "unreachable in every store" if code == FindingCode.UNRESOLVABLE_RECORD \
                    else "integrity failure: stored bytes do not match the address"
                findings.append(Finding(code, ea.seq, f"detail record {ea.detail_hash.hex()[:16]} {what}"))
            code, why = self._membership(ea.actor, ea.detail_hash)
            if code is not None:
                ea.checks["toc_membership"] = None if code == FindingCode.UNRESOLVABLE_RECORD else False
                findings.append(Finding(code, ea.seq, why))
        findings.sort(key=lambda f: (f.seq, f.code.value, f.detail))
        return CustodyReport(serial, dev.registered_by, list(dev.audits),
                             self._timeline(dev), findings)

    def _timeline(self, dev: _Device) -> list[CustodySpan]:
        spans: list[CustodySpan] = []
        for seq, who in enumerate(dev.custodians):
            if spans and spans[-1].custodian == who:
                last = spans[-1]
                spans[-1] = CustodySpan(who, last.role, last.from_seq, seq)
            else:
                spans.append(CustodySpan(who, self.roles.get(who), seq, seq))
        return spans

    def anchor_checks(self) -> list[dict]:
        out = []
        for owner in sorted(self.anchors):
            tocs = self._tocs(owner)
            for anchor in self.anchors[owner]:
                if not tocs:
                    status = "UNAVAILABLE"
                elif any(t is not None and len(t) >= anchor.toc_length
                         and t.root(anchor.toc_length) == anchor.toc_root for t in tocs):
                    status = "VERIFIED"
                else:
                    status = "MISMATCH"
                out.append({"stakeholder": owner.hex(), "toc_length": anchor.toc_length,
                            "anchored_at": anchor.anchored_at, "status": status})
        return out


def reconstruct_custody(serial: str, chain: Sequence[Block], stores: Sequence[OffchainStore],
                        genesis: GenesisConfig) -> CustodyReport:
    return ChainAudit(chain, genesis, stores).report(serial)


@dataclass
class SystemReport:
    chain: ChainReport
    devices: dict[str, CustodyReport]
    anchors: list[dict]
    orphan_events: list[tuple[int, str]]

    def findings(self) -> list[dict]:
        out = []
        for b in self.chain.blocks:
            for name in b.failed():
                out.append({"scope": f"block:{b.index}", "code": "CHAIN_" + name.upper(), "detail": "; ".join(b.notes)})
        for a in self.anchors:
            if a["status"] == "MISMATCH":
                out.append({"scope": f"toc:{a['stakeholder']}", "code": FindingCode.UNANCHORED_RECORD.value,
                            "detail": f"anchor of length {a['toc_length']} does not match local TOC"})
            elif a["status"] == "UNAVAILABLE":
                out.append({"scope": f"toc:{a['stakeholder']}", "code": FindingCode.UNRESOLVABLE_RECORD.value,
                            "detail": "TOC not reachable"})
        for height, serial in self.orphan_events:
            out.append({"scope": f"block:{height}", "code": FindingCode.LIFECYCLE_VIOLATION.value,
                        "detail": f"event for unregistered device {serial!r}"})
        for serial in sorted(self.devices):
            for f in self.devices[serial].findings:
                out.append({"scope": f"device:{serial}", **f.to_json()})
        return out

    @property
    def ok(self) -> bool:
        return self.chain.ok and not self.findings()

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "chain": self.chain.to_json(),
            "devices": {s: self.devices[s].to_json() for s in sorted(self.devices)},
            "anchors": self.anchors,
            "findings": self.findings(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def verify_full(chain: Sequence[Block], stores: Sequence[OffchainStore], genesis: GenesisConfig) -> SystemReport:
    chain_report = verify_chain(chain, genesis)
    ctx = ChainAudit(chain, genesis, stores)
    devices = {s: ctx.report(s) for s in sorted(ctx.devices)}
    return SystemReport(chain_report, devices, ctx.anchor_checks(), list(ctx.orphans))


def render_report(report: CustodyReport, names: Optional[dict[bytes, str]] = None) -> str:
    """Plain-text table for terminals."""
    def who(k: Optional[bytes]) -> str:
        if k is None:
            return "-"
        return (names or {}).get(k, k.hex()[:12])

    lines = [f"device {report.device_serial}: {report.verdict.value}", ""]
    lines.append(f"{'seq':>4}  {'event':<28} {'actor':<14} {'counterparty':<14} {'height':>6}  checks")
    for e in report.events:
        bad = [k for k, v in e.checks.items() if v is not True]
        lines.append(f"{e.seq:>4}  {e.event_type.name:<28} {who(e.actor):<14} "
                     f"{who(e.counterparty):<14} {e.block_height:>6}  {'ok' if not bad else ','.join(bad)}")
    lines.append("")
    lines.append("custody: " + " -> ".join(
        f"{who(s.custodian)}[{s.from_seq}..{s.to_seq}]" for s in report.custody_timeline))
    for f in report.findings:
        lines.append(f"finding {f.code.value} at seq {f.seq}: {f.detail}")
    return "\n".join(lines)
