"""Registry state machines: stakeholders, products and process events.

Every mutating method validates completely before touching state, so a
rejected call leaves the registry exactly as it was. That property is what
lets the sealer skip a bad transaction without rolling anything back.

Check order for events (first failure wins):
device exists, detail record present, actor registered, role permitted,
actor holds custody, lifecycle permits the event, bill of materials valid.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

from rlchain.encoding import ZERO_HASH, Writer, sha256
from rlchain.errors import (
    AlreadyExists,
    InvalidBom,
    InvalidTransition,
    MissingRecord,
    NoProgress,
    NotFound,
    PermissionDenied,
)
from rlchain.model import (
    DEVICE_REGISTRARS,
    MANDATORY_STEPS,
    PERMISSIONS,
    PROCESSING_EVENTS,
    RELEASE_EVENTS,
    TRANSFER_TARGETS,
    Classification,
    ComponentRecord,
    ComponentType,
    DeviceRecord,
    DeviceState,
    Disposition,
    EventResult,
    EventType,
    ProcessEvent,
    Role,
    StakeholderRecord,
    TocAnchor,
)
from rlchain.tx import (
    AnchorToc,
    ClassifyDevice,
    Payload,
    RecordEvent,
    RegisterDevice,
    RegisterStakeholder,
)


@dataclass
class StakeholderStats:
    id: bytes
    role: Role
    event_counts: dict[EventType, int]
    devices_handled: int
    latest_anchor: Optional[TocAnchor]

    def to_json(self) -> dict:
        a = self.latest_anchor
        return {
            "id": self.id.hex(),
            "role": self.role.name,
            "event_counts": {ev.name: self.event_counts.get(ev, 0) for ev in EventType},
            "devices_handled": self.devices_handled,
            "latest_anchor": None if a is None else {
                "toc_length": a.toc_length,
                "toc_root": a.toc_root.hex(),
                "anchored_at": a.anchored_at,
            },
        }


def has_data_wipe(history: Iterable[ProcessEvent]) -> bool:
    return any(e.event_type == EventType.DATA_WIPE for e in history)


def classification_blockers(history: list[ProcessEvent]) -> list[str]:
    """Unmet preconditions for classifying a device with this history."""
    seen = {e.event_type for e in history}
    missing = [ev.name for ev in sorted(MANDATORY_STEPS) if ev not in seen]
    last_fix = max(
        (i for i, e in enumerate(history)
         if e.event_type in (EventType.REPAIR, EventType.COMPONENT_REPLACEMENT)),
        default=-1,
    )
    passed = any(
        e.event_type == EventType.FUNCTIONAL_TEST and e.result == EventResult.PASS
        for e in history[last_fix + 1:]
    )
    if not passed:
        missing.append("FUNCTIONAL_TEST(PASS) after last repair")
    return missing


@dataclass
class Registry:
    registrars: frozenset[bytes]
    stakeholders: dict[bytes, StakeholderRecord] = field(default_factory=dict)
    devices: dict[str, DeviceRecord] = field(default_factory=dict)
    events: dict[str, list[ProcessEvent]] = field(default_factory=dict)
    _counts: dict[bytes, Counter] = field(default_factory=dict, repr=False)
    _handled: dict[bytes, set[str]] = field(default_factory=dict, repr=False)

    # -- dispatch ---------------------------------------------------------

    def apply(self, sender: bytes, payload: Payload, height: int):
        if isinstance(payload, RegisterStakeholder):
            return self.register_stakeholder(sender, payload.candidate, payload.role,
                                             payload.display_name, height)
        if isinstance(payload, RegisterDevice):
            return self.register_device(sender, payload, height)
        if isinstance(payload, RecordEvent):
            return self.record_event(sender, payload, height)
        if isinstance(payload, ClassifyDevice):
            return self.classify_device(sender, payload, height)
        if isinstance(payload, AnchorToc):
            return self.anchor_toc(sender, payload, height)
        raise TypeError(f"unsupported payload {type(payload).__name__}")

    # -- stakeholders -----------------------------------------------------

    def register_stakeholder(self, signer: bytes, candidate: bytes, role: Role,
                             display_name: str, height: int = 0) -> StakeholderRecord:
        if signer not in self.registrars:
            raise PermissionDenied("only a genesis registrar may register stakeholders")
        if candidate in self.stakeholders:
            raise AlreadyExists(f"stakeholder {candidate.hex()[:16]} already registered")
        rec = StakeholderRecord(candidate, Role(role), display_name, height)
        self.stakeholders[candidate] = rec
        self._counts[candidate] = Counter()
        self._handled[candidate] = set()
        return rec

    def _actor(self, actor: bytes) -> StakeholderRecord:
        rec = self.stakeholders.get(actor)
        if rec is None or not rec.active:
            raise PermissionDenied("sender is not a registered active stakeholder")
        return rec

    def anchor_toc(self, sender: bytes, payload: AnchorToc, height: int = 0) -> TocAnchor:
        rec = self._actor(sender)
        last = rec.toc_state.toc_length if rec.toc_state else 0
        if payload.toc_length <= last:
            raise NoProgress(f"toc_length {payload.toc_length} does not exceed anchored {last}")
        anchor = TocAnchor(sender, payload.toc_length, payload.toc_root, height)
        rec.toc_state = anchor
        return anchor

    # -- devices ----------------------------------------------------------

    def register_device(self, actor: bytes, p: RegisterDevice, height: int = 0) -> DeviceRecord:
        rec = self._actor(actor)
        if rec.role not in DEVICE_REGISTRARS:
            raise PermissionDenied(f"{rec.role.name} may not register devices")
        maker = self.stakeholders.get(p.original_manufacturer)
        if maker is None or maker.role != Role.MANUFACTURER:
            raise PermissionDenied("original manufacturer must be a registered MANUFACTURER")
        if p.serial in self.devices:
            raise AlreadyExists(f"device {p.serial!r} already registered")
        if not p.serial:
            raise InvalidBom("device serial must be non-empty")
        types = [c.component_type for c in p.components]
        if sorted(types) != sorted(ComponentType):
            raise InvalidBom("bill of materials needs exactly one component of each type")
        serials = [c.serial for c in p.components]
        if len(set(serials)) != len(serials) or "" in serials:
            raise InvalidBom("component serials must be non-empty and unique within the device")
        dev = DeviceRecord(
            serial=p.serial,
            model=p.model,
            original_manufacturer=p.original_manufacturer,
            components=[ComponentRecord(c.component_type, c.serial, c.feature_info_hash)
                        for c in p.components],
            custodian=actor,
            registered_at=height,
        )
        self.devices[p.serial] = dev
        self.events[p.serial] = []
        return dev

    def _device(self, serial: str) -> DeviceRecord:
        dev = self.devices.get(serial)
        if dev is None:
            raise NotFound(f"device {serial!r}")
        return dev

    def _counterparty(self, who: Optional[bytes], allowed: Iterable[Role], actor: bytes) -> StakeholderRecord:
        rec = self.stakeholders.get(who) if who is not None else None
        if rec is None or not rec.active:
            raise InvalidTransition("counterparty must be a registered active stakeholder")
        if rec.role not in allowed:
            raise InvalidTransition(f"counterparty role {rec.role.name} not allowed here")
        if who == actor:
            raise InvalidTransition("counterparty must differ from the actor")
        return rec

    def record_event(self, actor: bytes, ev: RecordEvent, height: int = 0) -> DeviceRecord:
        dev = self._device(ev.device_serial)
        if ev.detail_hash == ZERO_HASH:
            raise MissingRecord("every event needs an off-chain detail record")
        rec = self._actor(actor)
        kind = ev.event_type
        if kind == EventType.CLASSIFICATION:
            raise InvalidTransition("classification is recorded through classify_device")
        if rec.role not in PERMISSIONS[kind]:
            raise PermissionDenied(f"{rec.role.name} may not record {kind.name}")
        if kind != EventType.COLLECTION and dev.custodian != actor:
            raise PermissionDenied("actor is not the current custodian")

        history = self.events[dev.serial]
        state = dev.state
        custodian = dev.custodian
        disposition = Disposition.NONE
        if state in (DeviceState.FINALIZED, DeviceState.RECYCLED):
            raise InvalidTransition(f"device is {state.name}")
        if ev.replacement is not None and kind != EventType.COMPONENT_REPLACEMENT:
            raise InvalidTransition("replacement data only allowed on COMPONENT_REPLACEMENT")

        if kind == EventType.COLLECTION:
            if state != DeviceState.REGISTERED:
                raise InvalidTransition("COLLECTION only from REGISTERED")
            self._counterparty(ev.counterparty, (Role.CUSTOMER,), actor)
            state, custodian = DeviceState.COLLECTED, actor
        elif kind == EventType.CUSTODY_TRANSFER:
            if state not in (DeviceState.COLLECTED, DeviceState.IN_TRANSIT, DeviceState.PROCESSED):
                raise InvalidTransition(f"no custody transfer while {state.name}")
            target = self._counterparty(ev.counterparty, TRANSFER_TARGETS, actor)
            custodian = ev.counterparty
            if state != DeviceState.PROCESSED:
                state = (DeviceState.IN_TRANSIT if target.role == Role.THIRD_PARTY_LOGISTICS
                         else DeviceState.COLLECTED)
        elif kind in PROCESSING_EVENTS:
            if state not in (DeviceState.COLLECTED, DeviceState.IN_PROCESS):
                raise InvalidTransition(f"no processing while {state.name}")
            if state == DeviceState.COLLECTED and kind != EventType.INSPECTION:
                raise InvalidTransition("INSPECTION must precede other processing")
            if ev.counterparty is not None:
                raise InvalidTransition("processing events take no counterparty")
            if kind == EventType.FUNCTIONAL_TEST and ev.result == EventResult.NA:
                raise InvalidTransition("FUNCTIONAL_TEST needs PASS or FAIL")
            if kind == EventType.COMPONENT_REPLACEMENT:
                self._check_replacement(dev, ev)
            state = DeviceState.IN_PROCESS
        elif kind in RELEASE_EVENTS:
            if state != DeviceState.PROCESSED:
                raise InvalidTransition(f"{kind.name} requires PROCESSED, device is {state.name}")
            if not has_data_wipe(history):
                raise InvalidTransition(f"{kind.name} before DATA_WIPE")
            allowed = [r for r in Role if r != Role.GOVERNMENT]
            self._counterparty(ev.counterparty, allowed, actor)
            state, custodian = DeviceState.FINALIZED, ev.counterparty
            disposition = (Disposition.SOLD_SECONDARY if kind == EventType.SALE
                           else Disposition.DONATED)

        # validated: mutate
        new_serial = None
        if ev.replacement is not None:
            for c in dev.components:
                if c.serial == ev.replacement.old_serial:
                    c.installed = False
            spec = ev.replacement.new
            dev.components.append(ComponentRecord(spec.component_type, spec.serial, spec.feature_info_hash))
            new_serial = spec.serial
        dev.state = state
        dev.custodian = custodian
        if disposition != Disposition.NONE:
            dev.disposition = disposition
        self._append(dev, ProcessEvent(
            event_type=kind,
            device_serial=dev.serial,
            actor=actor,
            counterparty=ev.counterparty,
            result=ev.result,
            detail_hash=ev.detail_hash,
            seq=dev.event_count,
            block_height=height,
            replaced_serial=ev.replacement.old_serial if ev.replacement else None,
            new_component_serial=new_serial,
        ))
        return dev

    @staticmethod
    def _check_replacement(dev: DeviceRecord, ev: RecordEvent) -> None:
        rep = ev.replacement
        if rep is None:
            raise InvalidBom("COMPONENT_REPLACEMENT needs old and new component")
        old = next((c for c in dev.components if c.serial == rep.old_serial and c.installed), None)
        if old is None:
            raise InvalidBom(f"no installed component {rep.old_serial!r}")
        if rep.new.component_type != old.component_type:
            raise InvalidBom("replacement must keep the component type")
        if not rep.new.serial or any(c.serial == rep.new.serial for c in dev.components):
            raise InvalidBom(f"component serial {rep.new.serial!r} already used on this device")

    def classify_device(self, actor: bytes, p: ClassifyDevice, height: int = 0) -> DeviceRecord:
        dev = self._device(p.device_serial)
        if p.detail_hash == ZERO_HASH:
            raise MissingRecord("every event needs an off-chain detail record")
        rec = self._actor(actor)
        if p.classification == Classification.NONE:
            raise InvalidTransition("classification must be REMANUFACTURED or REFURBISHED")
        if p.classification == Classification.REMANUFACTURED:
            if actor != dev.original_manufacturer:
                raise PermissionDenied("only the original manufacturer may remanufacture")
        elif rec.role not in PERMISSIONS[EventType.CLASSIFICATION]:
            raise PermissionDenied(f"{rec.role.name} may not classify devices")
        if dev.custodian != actor:
            raise PermissionDenied("actor is not the current custodian")
        if dev.state != DeviceState.IN_PROCESS:
            raise InvalidTransition(f"classification requires IN_PROCESS, device is {dev.state.name}")
        blockers = classification_blockers(self.events[dev.serial])
        if blockers:
            raise InvalidTransition("missing mandatory steps: " + ", ".join(blockers))

        dev.state = DeviceState.PROCESSED
        dev.classification = p.classification
        self._append(dev, ProcessEvent(
            event_type=EventType.CLASSIFICATION,
            device_serial=dev.serial,
            actor=actor,
            counterparty=None,
            result=EventResult.NA,
            detail_hash=p.detail_hash,
            seq=dev.event_count,
            block_height=height,
            classification=p.classification,
        ))
        return dev

    def _append(self, dev: DeviceRecord, event: ProcessEvent) -> None:
        self.events[dev.serial].append(event)
        dev.event_count += 1
        self._counts[event.actor][event.event_type] += 1
        self._handled[event.actor].add(dev.serial)

    # -- permissionless getters ------------------------------------------

    def get_device(self, serial: str) -> DeviceRecord:
        return self._device(serial)

    def get_device_history(self, serial: str) -> list[ProcessEvent]:
        self._device(serial)
        return list(self.events[serial])

    def get_stakeholder(self, sid: bytes) -> StakeholderRecord:
        rec = self.stakeholders.get(sid)
        if rec is None:
            raise NotFound(f"stakeholder {sid.hex()[:16]}")
        return rec

    def get_stakeholder_stats(self, sid: bytes) -> StakeholderStats:
        rec = self.get_stakeholder(sid)
        return StakeholderStats(
            id=sid,
            role=rec.role,
            event_counts=dict(self._counts[sid]),
            devices_handled=len(self._handled[sid]),
            latest_anchor=rec.toc_state,
        )

    # -- digest -----------------------------------------------------------

    def state_digest(self) -> bytes:
        w = Writer()
        w.u32(len(self.stakeholders))
        for sid in sorted(self.stakeholders):
            s = self.stakeholders[sid]
            w.fixed(sid, 32).u8(s.role).text(s.display_name).u64(s.registered_at).flag(s.active)
            w.flag(s.toc_state is not None)
            if s.toc_state is not None:
                w.u64(s.toc_state.toc_length).fixed(s.toc_state.toc_root, 32).u64(s.toc_state.anchored_at)
        w.u32(len(self.devices))
        for serial in sorted(self.devices):
            d = self.devices[serial]
            w.text(d.serial).text(d.model).fixed(d.original_manufacturer, 32)
            w.u8(d.state).u8(d.classification).u8(d.disposition).fixed(d.custodian, 32)
            w.u64(d.event_count).u64(d.registered_at).u32(len(d.components))
            for c in d.components:
                w.u8(c.component_type).text(c.serial).fixed(c.feature_info_hash, 32).flag(c.installed)
            for e in self.events[serial]:
                w.u8(e.event_type).fixed(e.actor, 32).fixed(e.counterparty or bytes(32), 32)
                w.u8(e.result).fixed(e.detail_hash, 32).u64(e.seq).u64(e.block_height)
                w.u8(e.classification).text(e.replaced_serial or "").text(e.new_component_serial or "")
        return sha256(w.getvalue())


def event_to_json(e: ProcessEvent) -> dict:
    return {
        "seq": e.seq,
        "event_type": e.event_type.name,
        "device_serial": e.device_serial,
        "actor": e.actor.hex(),
        "counterparty": e.counterparty.hex() if e.counterparty else None,
        "result": e.result.name,
        "detail_hash": e.detail_hash.hex(),
        "block_height": e.block_height,
        "classification": e.classification.name,
        "replaced_serial": e.replaced_serial,
        "new_component_serial": e.new_component_serial,
    }


def device_to_json(d: DeviceRecord) -> dict:
    return {
        "serial": d.serial,
        "model": d.model,
        "original_manufacturer": d.original_manufacturer.hex(),
        "state": d.state.name,
        "classification": d.classification.name,
        "disposition": d.disposition.name,
        "custodian": d.custodian.hex(),
        "event_count": d.event_count,
        "registered_at": d.registered_at,
        "components": [
            {"component_type": c.component_type.name, "serial": c.serial,
             "feature_info_hash": c.feature_info_hash.hex(), "installed": c.installed}
            for c in d.components
        ],
    }
